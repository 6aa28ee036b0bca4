//! Depth from binary codes and per-pixel spectra from scanline sweeps.

use alloc::vec;
use alloc::vec::Vec;

use crate::correspondence::{px2index, zero_order};
use crate::error::{Error, Result};
use crate::image::{Cube, Image, ScalarMap};
use crate::math;
use crate::optics::{Order, OrderSet, Rig};
use crate::par;
use crate::patterns::{PatternSetKind, ScanlineSpec};
use crate::sim::{pattern_drive, CaptureStack, PixelOptics, RenderSettings};
use crate::correspondence::CorrespondenceModel;
use crate::spectra::{roughness, EfficiencySet, ResponseSet, WavelengthGrid};

/// How a binary frame is split into on and off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `black + τ (white − black)` per pixel; needs reference frames.
    Relative(f64),
    /// Fixed gray level.
    Absolute(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Relative(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub threshold: Threshold,
    /// Pixels whose white − black gray contrast is at or below this are invalid.
    pub min_contrast: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { threshold: Threshold::default(), min_contrast: 1e-9 }
    }
}

/// Decoded projector (column, row) per camera pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedCodes {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<Option<[u32; 2]>>,
}

impl DecodedCodes {
    pub fn get(&self, x: usize, y: usize) -> Option<[u32; 2]> {
        self.codes[y * self.width + x]
    }
}

/// Black and white reference frames.
#[derive(Debug, Clone, Copy)]
pub struct References<'a> {
    pub black: &'a Image,
    pub white: &'a Image,
}

/// Thresholds each binary frame (channel-mean gray) and assembles column
/// and row codes. Complementary stacks compare each frame with its inverse.
pub fn decode_binary(
    stack: &CaptureStack,
    refs: Option<References<'_>>,
    projector: (u32, u32),
    opts: &DecodeOptions,
) -> Result<DecodedCodes> {
    let PatternSetKind::Binary { column_bits, row_bits, complement } = stack.kind else {
        return Err(Error::InvalidArgument("stack is not a binary-code capture".into()));
    };
    let per_bit = if complement { 2 } else { 1 };
    let needed = (column_bits + row_bits) as usize * per_bit;
    if stack.frames.len() != needed {
        return Err(Error::LengthMismatch { expected: needed, actual: stack.frames.len() });
    }
    if matches!(opts.threshold, Threshold::Relative(_)) && refs.is_none() && !complement {
        return Err(Error::InvalidArgument("relative threshold needs black and white reference frames".into()));
    }
    let (w, h) = (stack.width, stack.height);
    let codes = par::map_indices(w * h, |i| {
        let (x, y) = (i % w, i / w);
        let mut level = None;
        if let Some(r) = refs {
            let (b, wh) = (r.black.gray(x, y), r.white.gray(x, y));
            if !(wh - b > opts.min_contrast) {
                return None;
            }
            level = Some((b, wh));
        }
        let thr = match (opts.threshold, level) {
            (Threshold::Relative(t), Some((b, wh))) => b + t * (wh - b),
            (Threshold::Absolute(t), _) => t,
            (Threshold::Relative(_), None) => 0.0,
        };
        let mut bits = [0u32; 2];
        for k in 0..(column_bits + row_bits) as usize {
            let v = stack.frames[k * per_bit].gray(x, y);
            let on = if complement { v > stack.frames[k * per_bit + 1].gray(x, y) } else { v > thr };
            let (axis, b) = if k < column_bits as usize { (0, k) } else { (1, k - column_bits as usize) };
            bits[axis] |= (on as u32) << b;
        }
        (bits[0] < projector.0 && bits[1] < projector.1).then_some(bits)
    });
    Ok(DecodedCodes { width: w, height: h, codes })
}

/// Accepted depth interval in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        Self { min: 100.0, max: 5000.0 }
    }
}

/// Depth at which the zero-order column of pixel `p` equals `column`.
pub fn triangulate(p: [f64; 2], column: f64, rig: &Rig, range: DepthRange) -> Result<f64> {
    let f = |z: f64| zero_order(p, z, rig).map(|q| q[0] - column);
    let (mut lo, mut hi) = (range.min, range.max);
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoSolution);
    }
    let rising = fhi > flo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo < 1e-10 {
            break;
        }
        let v = f(mid)?;
        if (v < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Depth per camera pixel with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.depth[i])
    }

    /// Depths as a map with NaN at invalid pixels.
    pub fn to_map(&self) -> ScalarMap {
        let d = self.depth.iter().zip(&self.valid).map(|(&z, &v)| if v { z } else { f64::NAN }).collect();
        ScalarMap::from_data(self.width, self.height, d).expect("sizes match")
    }

    pub fn from_map(map: &ScalarMap) -> Self {
        Self {
            width: map.width(),
            height: map.height(),
            depth: map.data().iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect(),
            valid: map.data().iter().map(|&z| z > 0.0).collect(),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Triangulates every decoded pixel.
pub fn depth_from_codes(codes: &DecodedCodes, rig: &Rig, range: DepthRange) -> DepthMap {
    let w = codes.width;
    let depth = par::map_indices(codes.codes.len(), |i| {
        let c = codes.codes[i]?;
        triangulate([(i % w) as f64, (i / w) as f64], c[0] as f64, rig, range).ok()
    });
    DepthMap {
        width: w,
        height: codes.height,
        valid: depth.iter().map(|d| d.is_some()).collect(),
        depth: depth.into_iter().map(|d| d.unwrap_or(0.0)).collect(),
    }
}

/// Observations of one order at one pixel: `rows × n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderBlock {
    pub order: Order,
    /// Scanline frame behind each group of three (R, G, B) rows.
    pub frames: Vec<usize>,
    pub a: Vec<f64>,
    pub i: Vec<f64>,
    pub weight: f64,
}

impl OrderBlock {
    pub fn rows(&self) -> usize {
        self.i.len()
    }
}

/// Per-pixel linear system `A_m H ≈ I_m` for each order.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    pub n: usize,
    pub blocks: Vec<OrderBlock>,
    /// Factor the raw rows were divided by.
    pub scale: f64,
}

impl SystemMatrix {
    pub fn block(&self, order: Order) -> Option<&OrderBlock> {
        self.blocks.iter().find(|b| b.order == order)
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|b| b.rows() == 0)
    }

    pub fn used_orders(&self) -> OrderSet {
        let mut s = OrderSet::NONE;
        for b in &self.blocks {
            if b.rows() > 0 {
                s.insert(b.order);
            }
        }
        s
    }

    /// Σ_m κ_m ‖A_m h − I_m‖².
    pub fn data_term(&self, h: &[f64]) -> f64 {
        let mut total = 0.0;
        for b in &self.blocks {
            for (r, &obs) in b.i.iter().enumerate() {
                let row = &b.a[r * self.n..(r + 1) * self.n];
                let pred: f64 = row.iter().zip(h).map(|(x, y)| x * y).sum();
                total += b.weight * (pred - obs) * (pred - obs);
            }
        }
        total
    }
}

/// Camera-channel rows for scanline frame `frame` at a pixel: the full
/// per-band response to that frame across every order.
fn frame_rows(
    optics: &PixelOptics,
    spec: &ScanlineSpec,
    frame: usize,
    proj_h: u32,
    responses: &ResponseSet,
    eta: &EfficiencySet,
    settings: &RenderSettings,
) -> [Vec<f64>; 3] {
    let n = eta.grid().len();
    let drive = pattern_drive(optics, &spec.pattern(frame), eta, spec.projector_width, proj_h);
    let k = settings.gain * optics.inv_d2;
    let mut rows = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (j, w) in drive.iter().enumerate() {
        let l = responses.proj_at(0, j) * w[0] + responses.proj_at(1, j) * w[1] + responses.proj_at(2, j) * w[2];
        if l == 0.0 {
            continue;
        }
        let t = settings.filter.as_ref().map_or(1.0, |f| f.value(j));
        for (c, row) in rows.iter_mut().enumerate() {
            row[j] = k * responses.cam_at(c, j) * l * t;
        }
    }
    rows
}

/// Assembles the system at one pixel.
///
/// First-order blocks collect, for every band, the frame whose line is
/// nearest that band's column; the zero-order block is the single frame
/// lighting the zero-order column. Each collected frame contributes its full
/// per-band response, so a noiseless render satisfies `A H = I` exactly.
/// Rows are divided by the RMS of the first-order entries (zero-order
/// entries when no first order is used).
#[allow(clippy::too_many_arguments)]
pub fn assemble_system(
    optics: &PixelOptics,
    observe: impl Fn(usize) -> [f64; 3],
    spec: &ScanlineSpec,
    proj_h: u32,
    orders: OrderSet,
    kappa: (f64, f64),
    responses: &ResponseSet,
    eta: &EfficiencySet,
    settings: &RenderSettings,
) -> Result<SystemMatrix> {
    let n = eta.grid().len();
    let mut blocks = Vec::new();
    let mut push = |order: Order, frames: Vec<usize>, weight: f64| {
        let mut a = Vec::with_capacity(frames.len() * 3 * n);
        let mut obs = Vec::with_capacity(frames.len() * 3);
        for &f in &frames {
            let rows = frame_rows(optics, spec, f, proj_h, responses, eta, settings);
            let v = observe(f);
            for c in 0..3 {
                a.extend_from_slice(&rows[c]);
                obs.push(v[c]);
            }
        }
        blocks.push(OrderBlock { order, frames, a, i: obs, weight });
    };
    for order in Order::FIRST {
        if !(orders.contains(order) && optics.valid.contains(order)) {
            continue;
        }
        let Some(cols) = optics.columns(order) else { continue };
        let mut frames: Vec<usize> = Vec::new();
        for &q in cols {
            if let Ok(f) = px2index(q, spec) {
                if !frames.contains(&f) {
                    frames.push(f);
                }
            }
        }
        push(order, frames, kappa.0);
    }
    if let Ok(f) = px2index(optics.zero[0], spec) {
        if optics.row(proj_h).is_some() {
            push(Order::Zero, vec![f], kappa.1);
        }
    }

    let rms = |blocks: &[OrderBlock], zero: bool| {
        let (mut s, mut c) = (0.0, 0usize);
        for b in blocks.iter().filter(|b| (b.order == Order::Zero) == zero) {
            for &v in b.a.iter().filter(|v| **v != 0.0) {
                s += v * v;
                c += 1;
            }
        }
        (c > 0).then(|| math::sqrt(s / c as f64))
    };
    let scale = rms(&blocks, false).or_else(|| rms(&blocks, true)).ok_or(Error::EmptySystem)?;
    for b in &mut blocks {
        b.a.iter_mut().for_each(|v| *v /= scale);
        b.i.iter_mut().for_each(|v| *v /= scale);
    }
    Ok(SystemMatrix { n, blocks, scale })
}

/// Scanline geometry of a capture stack.
pub fn scanline_spec(stack: &CaptureStack) -> Result<ScanlineSpec> {
    match stack.kind {
        PatternSetKind::Scanline(s) => {
            if stack.frames.len() != s.count() {
                return Err(Error::LengthMismatch { expected: s.count(), actual: stack.frames.len() });
            }
            Ok(s)
        }
        _ => Err(Error::InvalidArgument("stack is not a scanline capture".into())),
    }
}

/// System at pixel `p` with depth `z` from a scanline stack.
#[allow(clippy::too_many_arguments)]
pub fn build_system(
    p: [usize; 2],
    z: f64,
    stack: &CaptureStack,
    rig: &Rig,
    model: &CorrespondenceModel,
    responses: &ResponseSet,
    eta: &EfficiencySet,
    settings: &RenderSettings,
    kappa: (f64, f64),
) -> Result<SystemMatrix> {
    let spec = scanline_spec(stack)?;
    let optics = PixelOptics::compute([p[0] as f64, p[1] as f64], z, rig, model, eta.grid())?;
    assemble_system(
        &optics,
        |f| stack.frames[f].get(p[0], p[1]),
        &spec,
        rig.projector.height,
        rig.grating.orders(),
        kappa,
        responses,
        eta,
        settings,
    )
}

/// Per-pixel order weights.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaMap {
    pub width: usize,
    pub height: usize,
    /// κ for the first-order terms; the zero-order weight is `1 − κ₁`.
    pub first: Vec<f64>,
}

impl KappaMap {
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let k = self.first[y * self.width + x];
        (k, 1.0 - k)
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = math::ceil(3.0 * sigma).max(0.0) as usize;
    let mut k: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let t = (i as f64 - r as f64) / sigma;
            math::exp(-0.5 * t * t)
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur; weights falling off the image are renormalized.
pub fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..height {
            for x in 0..width {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for (t, kv) in k.iter().enumerate() {
                    let d = t as isize - r;
                    let (xx, yy) = if horizontal { (x as isize + d, y as isize) } else { (x as isize, y as isize + d) };
                    if xx < 0 || yy < 0 || xx >= width as isize || yy >= height as isize {
                        continue;
                    }
                    acc += kv * src[yy as usize * width + xx as usize];
                    wsum += kv;
                }
                out[y * width + x] = acc / wsum;
            }
        }
        out
    };
    let tmp = pass(data, true);
    pass(&tmp, false)
}

/// κ₁ = interior · (1 − blur(incomplete)), with `incomplete` flagging pixels
/// whose first-order observations are unusable.
pub fn compute_kappa(incomplete: &[bool], width: usize, height: usize, sigma: f64, interior: f64) -> KappaMap {
    let mask: Vec<f64> = incomplete.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let blurred = gaussian_blur(&mask, width, height, sigma);
    let first = blurred.iter().map(|b| (interior * (1.0 - b)).clamp(0.0, 1.0)).collect();
    KappaMap { width, height, first }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative objective change below which iteration may stop.
    pub objective_tol: f64,
    /// Relative step size below which iteration may stop.
    pub step_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iters: 1000, objective_tol: 1e-9, step_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelSolution {
    pub h: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Quadratic form of the objective: `hᵀQh − 2 bᵀh + c`.
struct Quadratic {
    n: usize,
    q: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

impl Quadratic {
    fn new(system: &SystemMatrix, kappa_lambda: f64) -> Self {
        let n = system.n;
        let mut q = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        let mut c = 0.0;
        for blk in &system.blocks {
            if blk.weight == 0.0 {
                continue;
            }
            for (r, &obs) in blk.i.iter().enumerate() {
                let row = &blk.a[r * n..(r + 1) * n];
                let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
                for &j in &nz {
                    let wj = blk.weight * row[j];
                    b[j] += wj * obs;
                    for &k in &nz {
                        q[j * n + k] += wj * row[k];
                    }
                }
                c += blk.weight * obs * obs;
            }
        }
        for j in 0..n.saturating_sub(1) {
            q[j * n + j] += kappa_lambda;
            q[(j + 1) * n + j + 1] += kappa_lambda;
            q[j * n + j + 1] -= kappa_lambda;
            q[(j + 1) * n + j] -= kappa_lambda;
        }
        Self { n, q, b, c }
    }

    fn value(&self, h: &[f64]) -> f64 {
        let n = self.n;
        let mut v = self.c;
        for j in 0..n {
            let row = &self.q[j * n..(j + 1) * n];
            let qh: f64 = row.iter().zip(h).map(|(a, b)| a * b).sum();
            v += h[j] * qh - 2.0 * self.b[j] * h[j];
        }
        v
    }

    /// `value(b) − value(a)` without cancellation against the constant term.
    fn change(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.n;
        let mut v = 0.0;
        for j in 0..n {
            let d = b[j] - a[j];
            if d == 0.0 {
                continue;
            }
            let row = &self.q[j * n..(j + 1) * n];
            let qs: f64 = row.iter().zip(a.iter().zip(b)).map(|(q, (x, y))| q * (x + y)).sum();
            v += d * (qs - 2.0 * self.b[j]);
        }
        v
    }

    fn gradient(&self, h: &[f64], out: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let row = &self.q[j * n..(j + 1) * n];
            let qh: f64 = row.iter().zip(h).map(|(a, b)| a * b).sum();
            out[j] = 2.0 * (qh - self.b[j]);
        }
    }

    /// Upper bound on the gradient's Lipschitz constant.
    fn lipschitz(&self) -> f64 {
        let n = self.n;
        let gersh = (0..n)
            .map(|j| self.q[j * n..(j + 1) * n].iter().map(|v| math::abs(*v)).sum::<f64>())
            .fold(0.0, f64::max);
        let frob = math::sqrt(self.q.iter().map(|v| v * v).sum::<f64>());
        2.0 * gersh.min(frob)
    }
}

/// Minimizes `Σ κ_m ‖A_m h − I_m‖² + κ_λ ‖∇h‖²` over `h ≥ 0` with
/// accelerated projected gradient (restarted whenever the objective would
/// rise, so accepted iterates never increase it).
pub fn solve_pixel(system: &SystemMatrix, kappa_lambda: f64, opts: &SolveOptions) -> Result<PixelSolution> {
    if system.is_empty() {
        return Err(Error::EmptySystem);
    }
    let n = system.n;
    let quad = Quadratic::new(system, kappa_lambda.max(0.0));
    let mut lip = quad.lipschitz();
    if !(lip > 0.0) {
        return Ok(PixelSolution { h: vec![0.0; n], objective: quad.c, iterations: 0, converged: true });
    }
    let mut x = vec![0.0; n];
    let mut fx = quad.value(&x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut g = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    let mut window = 0.0;
    let mut halvings = 0;
    for it in 0..opts.max_iters {
        iterations = it + 1;
        quad.gradient(&y, &mut g);
        for j in 0..n {
            xn[j] = (y[j] - g[j] / lip).max(0.0);
        }
        let mut delta = quad.change(&x, &xn);
        if delta > 0.0 {
            // restart from the last accepted point with a plain projected step
            t = 1.0;
            quad.gradient(&x, &mut g);
            for j in 0..n {
                xn[j] = (x[j] - g[j] / lip).max(0.0);
            }
            delta = quad.change(&x, &xn);
            y.copy_from_slice(&x);
            if delta > 0.0 {
                window += delta;
                xn.copy_from_slice(&x);
                delta = 0.0;
            }
        }
        let tn = 0.5 * (1.0 + math::sqrt(1.0 + 4.0 * t * t));
        let mom = (t - 1.0) / tn;
        let mut step2 = 0.0;
        let mut norm2 = 0.0;
        for j in 0..n {
            let d = xn[j] - x[j];
            step2 += d * d;
            norm2 += xn[j] * xn[j];
            y[j] = (xn[j] + mom * d).max(0.0);
        }
        x.copy_from_slice(&xn);
        fx += delta;
        t = tn;
        let rel_obj = math::abs(delta) / math::abs(fx).max(f64::MIN_POSITIVE);
        let rel_step = math::sqrt(step2) / math::sqrt(norm2).max(f64::MIN_POSITIVE);
        if rel_obj < opts.objective_tol && rel_step < opts.step_tol {
            converged = true;
            break;
        }
        if (it + 1) % 10 == 0 {
            if window > 0.0 {
                halvings += 1;
                if halvings > 20 {
                    return Err(Error::Diverged(halvings));
                }
                lip *= 2.0;
            }
            window = 0.0;
        }
    }
    let fx = quad.value(&x).max(0.0);
    Ok(PixelSolution { h: x, objective: fx, iterations, converged })
}

/// Outcome at one pixel of the spectral reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelStatus {
    Solved,
    NotConverged,
    NoDepth,
    Unsolvable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDiagnostic {
    pub status: PixelStatus,
    /// Σ κ_m ‖A_m h − I_m‖² in raw (unnormalized) intensity units.
    pub residual: f64,
    pub used: OrderSet,
    pub iterations: usize,
    pub kappa_first: f64,
}

impl PixelDiagnostic {
    fn empty(status: PixelStatus) -> Self {
        Self { status, residual: 0.0, used: OrderSet::NONE, iterations: 0, kappa_first: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperspectralImage {
    pub cube: Cube,
    pub diagnostics: Vec<PixelDiagnostic>,
}

impl HyperspectralImage {
    pub fn diagnostic(&self, x: usize, y: usize) -> &PixelDiagnostic {
        &self.diagnostics[y * self.cube.width() + x]
    }

    pub fn solved_mask(&self) -> Vec<bool> {
        self.diagnostics
            .iter()
            .map(|d| matches!(d.status, PixelStatus::Solved | PixelStatus::NotConverged))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperspectralOptions {
    pub kappa_lambda: f64,
    /// κ₁ where every pixel nearby has usable first orders.
    pub kappa_interior: f64,
    pub kappa_sigma: f64,
    /// Overrides the κ₁ map everywhere (0 gives the zero-order-only ablation).
    pub kappa_first_override: Option<f64>,
    pub orders: OrderSet,
    pub solve: SolveOptions,
}

impl Default for HyperspectralOptions {
    fn default() -> Self {
        Self {
            kappa_lambda: 0.005,
            kappa_interior: 0.9,
            kappa_sigma: 5.0,
            kappa_first_override: None,
            orders: OrderSet::BOTH,
            solve: SolveOptions::default(),
        }
    }
}

/// Solves for a spectrum at every pixel with a valid depth.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_hyperspectral(
    depth: &DepthMap,
    scan: &CaptureStack,
    rig: &Rig,
    model: &CorrespondenceModel,
    responses: &ResponseSet,
    eta: &EfficiencySet,
    settings: &RenderSettings,
    opts: &HyperspectralOptions,
) -> Result<HyperspectralImage> {
    let spec = scanline_spec(scan)?;
    if depth.width != scan.width || depth.height != scan.height {
        return Err(Error::InvalidArgument("depth map and scanline stack sizes differ".into()));
    }
    let grid: WavelengthGrid = *eta.grid();
    let (w, h) = (depth.width, depth.height);
    let optics: Vec<Option<PixelOptics>> = par::map_indices(w * h, |i| {
        let z = depth.get(i % w, i / w)?;
        PixelOptics::compute([(i % w) as f64, (i / w) as f64], z, rig, model, &grid).ok()
    });
    let usable = |o: &PixelOptics| {
        let mut s = OrderSet::NONE;
        for m in Order::FIRST {
            if o.valid.contains(m) && opts.orders.contains(m) && rig.grating.orders().contains(m) {
                s.insert(m);
            }
        }
        s
    };
    let incomplete: Vec<bool> = optics.iter().map(|o| o.as_ref().map_or(true, |o| usable(o).is_empty())).collect();
    let kappa = compute_kappa(&incomplete, w, h, opts.kappa_sigma, opts.kappa_interior);

    let results = par::map_indices(w * h, |i| {
        let (x, y) = (i % w, i / w);
        let n = grid.len();
        let Some(o) = optics[i].as_ref() else {
            let status = if depth.get(x, y).is_some() { PixelStatus::Unsolvable } else { PixelStatus::NoDepth };
            return (vec![0.0; n], PixelDiagnostic::empty(status));
        };
        let k1 = opts.kappa_first_override.unwrap_or(kappa.first[i]);
        let sys = match assemble_system(
            o,
            |f| scan.frames[f].get(x, y),
            &spec,
            rig.projector.height,
            usable(o),
            (k1, 1.0 - k1),
            responses,
            eta,
            settings,
        ) {
            Ok(s) => s,
            Err(_) => return (vec![0.0; n], PixelDiagnostic::empty(PixelStatus::Unsolvable)),
        };
        match solve_pixel(&sys, opts.kappa_lambda, &opts.solve) {
            Ok(sol) => {
                let residual = sys.data_term(&sol.h) * sys.scale * sys.scale;
                let diag = PixelDiagnostic {
                    status: if sol.converged { PixelStatus::Solved } else { PixelStatus::NotConverged },
                    residual,
                    used: sys.used_orders(),
                    iterations: sol.iterations,
                    kappa_first: k1,
                };
                (sol.h, diag)
            }
            Err(_) => (vec![0.0; n], PixelDiagnostic::empty(PixelStatus::Unsolvable)),
        }
    });
    let mut data = Vec::with_capacity(w * h * grid.len());
    let mut diagnostics = Vec::with_capacity(w * h);
    for (spec, d) in results {
        data.extend_from_slice(&spec);
        diagnostics.push(d);
    }
    Ok(HyperspectralImage { cube: Cube::from_data(w, h, grid, data)?, diagnostics })
}

/// Depth reconstruction settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DepthOptions {
    pub decode: DecodeOptions,
    pub range: DepthRange,
}

/// Decodes binary codes against the reference frames and triangulates.
pub fn reconstruct_depth(
    binary: &CaptureStack,
    refs: Option<References<'_>>,
    rig: &Rig,
    opts: &DepthOptions,
) -> Result<DepthMap> {
    let codes = decode_binary(binary, refs, (rig.projector.width, rig.projector.height), &opts.decode)?;
    Ok(depth_from_codes(&codes, rig, opts.range))
}

/// Depth then spectra from the three capture stacks.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    binary: &CaptureStack,
    references: &CaptureStack,
    scan: &CaptureStack,
    rig: &Rig,
    model: &CorrespondenceModel,
    responses: &ResponseSet,
    eta: &EfficiencySet,
    settings: &RenderSettings,
    depth_opts: &DepthOptions,
    hyper_opts: &HyperspectralOptions,
) -> Result<(DepthMap, HyperspectralImage)> {
    if references.frames.len() != 2 {
        return Err(Error::LengthMismatch { expected: 2, actual: references.frames.len() });
    }
    let refs = References { black: &references.frames[0], white: &references.frames[1] };
    let depth = reconstruct_depth(binary, Some(refs), rig, depth_opts)?;
    let hyper = reconstruct_hyperspectral(&depth, scan, rig, model, responses, eta, settings, hyper_opts)?;
    Ok((depth, hyper))
}

/// Regularization term of a solution, for diagnostics.
pub fn smoothness(h: &[f64]) -> f64 {
    roughness(h)
}
