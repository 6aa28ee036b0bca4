//! Forward rendering of capture stacks, noise and two-setting HDR.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::correspondence::{zero_order, CorrespondenceModel};
use crate::error::{Error, Result};
use crate::image::{Cube, Image, ScalarMap};
use crate::optics::{Order, OrderSet, Rig};
use crate::par;
use crate::patterns::{nearest_index, Pattern, PatternSet, PatternSetKind};
use crate::spectra::{EfficiencySet, ResponseSet, SpectralCurve, WavelengthGrid};

/// Named probe location for spectrum comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub x: usize,
    pub y: usize,
}

/// Ground truth in camera space: depth per pixel (non-positive or NaN means
/// undefined) and a reflectance cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    depth: ScalarMap,
    reflectance: Cube,
    pub probes: Vec<Probe>,
}

impl Scene {
    pub const MAX_REFLECTANCE: f64 = 1.5;

    pub fn new(depth: ScalarMap, reflectance: Cube) -> Result<Self> {
        if depth.width() != reflectance.width() || depth.height() != reflectance.height() {
            return Err(Error::InvalidArgument("depth map and reflectance cube sizes differ".into()));
        }
        if reflectance.data().iter().any(|v| !(0.0..=Self::MAX_REFLECTANCE).contains(v)) {
            return Err(Error::InvalidArgument("reflectance must lie in [0, 1.5]".into()));
        }
        if depth.data().iter().any(|v| v.is_infinite()) {
            return Err(Error::InvalidArgument("depth must be finite or NaN".into()));
        }
        Ok(Self { depth, reflectance, probes: Vec::new() })
    }

    pub fn with_probes(mut self, probes: Vec<Probe>) -> Self {
        self.probes = probes;
        self
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn depth(&self) -> &ScalarMap {
        &self.depth
    }

    pub fn reflectance(&self) -> &Cube {
        &self.reflectance
    }

    pub fn grid(&self) -> &WavelengthGrid {
        self.reflectance.grid()
    }

    pub fn depth_at(&self, x: usize, y: usize) -> Option<f64> {
        let z = self.depth.get(x, y);
        (z > 0.0).then_some(z)
    }
}

/// Per-pixel correspondence and falloff at a given depth.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelOptics {
    /// 1 / d², d the projector-to-surface distance in mm.
    pub inv_d2: f64,
    /// Zero-order projector (column, row).
    pub zero: [f64; 2],
    /// First-order columns per wavelength for orders −1 and +1, when the
    /// order is active and the surrogate covers the pixel.
    pub first: [Option<Vec<f64>>; 2],
    /// Orders whose columns stay on the projector for every wavelength.
    pub valid: OrderSet,
}

impl PixelOptics {
    pub fn compute(p: [f64; 2], z: f64, rig: &Rig, model: &CorrespondenceModel, grid: &WavelengthGrid) -> Result<Self> {
        let (lo, hi) = model.depth_limits();
        if !(z >= lo && z <= hi) {
            return Err(Error::OutOfHull("depth beyond the correspondence model range"));
        }
        let zero = zero_order(p, z, rig)?;
        let d = rig.propagation_distance(p, z)?;
        let mut first = [None, None];
        let mut valid = OrderSet::NONE;
        for order in rig.grating.orders().first_orders() {
            if let Ok(cols) = model.columns(p, z, order, grid) {
                if crate::correspondence::order_columns_valid(&cols, zero[0], order, rig.projector.width) {
                    valid.insert(order);
                }
                first[order.first_index()] = Some(cols);
            }
        }
        Ok(Self { inv_d2: 1.0 / (d * d), zero, first, valid })
    }

    pub fn columns(&self, order: Order) -> Option<&[f64]> {
        match order {
            Order::Zero => None,
            o => self.first[o.first_index()].as_deref(),
        }
    }

    /// Projector row shared by all orders, if on the projector.
    pub fn row(&self, height: u32) -> Option<u32> {
        let r = nearest_index(self.zero[1]);
        (r >= 0 && r < height as i64).then_some(r as u32)
    }
}

#[inline]
fn sample(pattern: &Pattern, q: f64, row: u32, width: u32) -> [f64; 3] {
    let c = nearest_index(q);
    if c >= 0 && c < width as i64 {
        pattern.value(c as u32, row)
    } else {
        [0.0; 3]
    }
}

/// Per-wavelength projector drive reaching a pixel: for each band the
/// efficiency-weighted pattern RGB summed over orders.
pub fn pattern_drive(optics: &PixelOptics, pattern: &Pattern, eta: &EfficiencySet, proj_w: u32, proj_h: u32) -> Vec<[f64; 3]> {
    let n = eta.grid().len();
    let mut out = vec![[0.0; 3]; n];
    let Some(row) = optics.row(proj_h) else {
        return out;
    };
    let p0 = sample(pattern, optics.zero[0], row, proj_w);
    for (j, w) in out.iter_mut().enumerate() {
        let e = eta.eta(Order::Zero, j);
        *w = [e * p0[0], e * p0[1], e * p0[2]];
    }
    for order in Order::FIRST {
        let Some(cols) = optics.columns(order) else { continue };
        for (j, w) in out.iter_mut().enumerate() {
            let e = eta.eta(order, j);
            if e == 0.0 {
                continue;
            }
            let p = sample(pattern, cols[j], row, proj_w);
            w[0] += e * p[0];
            w[1] += e * p[1];
            w[2] += e * p[2];
        }
    }
    out
}

/// Exposure scaling and an optional transmission filter in front of the
/// projector.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub gain: f64,
    pub filter: Option<SpectralCurve>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { gain: 1.0, filter: None }
    }
}

impl RenderSettings {
    /// Gain at which an all-white pattern, zero order only, on unit
    /// reflectance at depth `z` along the camera's central pixel reads 1 in
    /// its brightest channel.
    pub fn normalized(rig: &Rig, responses: &ResponseSet, eta: &EfficiencySet, z: f64) -> Result<Self> {
        let p = [rig.camera.width as f64 / 2.0, rig.camera.height as f64 / 2.0];
        let d = rig.propagation_distance(p, z)?;
        let mut peak = 0.0f64;
        for c in 0..3 {
            let s: f64 = (0..responses.grid().len())
                .map(|j| responses.cam_at(c, j) * eta.eta(Order::Zero, j) * responses.proj_sum(j))
                .sum();
            peak = peak.max(s);
        }
        if !(peak > 0.0) {
            return Err(Error::InvalidArgument("responses produce no signal".into()));
        }
        Ok(Self { gain: d * d / peak, filter: None })
    }

    pub fn with_filter(mut self, filter: Option<SpectralCurve>) -> Self {
        self.filter = filter;
        self
    }

    #[inline]
    fn transmission(&self, j: usize) -> f64 {
        self.filter.as_ref().map_or(1.0, |f| f.value(j))
    }
}

/// Camera RGB for a pixel given its reflectance spectrum and drive.
pub fn shade(
    h: &[f64],
    drive: &[[f64; 3]],
    inv_d2: f64,
    responses: &ResponseSet,
    settings: &RenderSettings,
) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    for (j, w) in drive.iter().enumerate() {
        if w[0] == 0.0 && w[1] == 0.0 && w[2] == 0.0 {
            continue;
        }
        let l = responses.proj_at(0, j) * w[0] + responses.proj_at(1, j) * w[1] + responses.proj_at(2, j) * w[2];
        let e = h[j] * l * settings.transmission(j);
        for (c, v) in rgb.iter_mut().enumerate() {
            *v += responses.cam_at(c, j) * e;
        }
    }
    let k = settings.gain * inv_d2;
    rgb.map(|v| v * k)
}

/// Renderer with per-pixel optics precomputed for a fixed depth map.
#[derive(Debug, Clone)]
pub struct IlluminationPlan {
    width: usize,
    height: usize,
    proj_w: u32,
    proj_h: u32,
    optics: Vec<Option<PixelOptics>>,
}

impl IlluminationPlan {
    pub fn new(depth: &ScalarMap, rig: &Rig, model: &CorrespondenceModel, grid: &WavelengthGrid) -> Self {
        let (w, h) = (depth.width(), depth.height());
        let optics = par::map_indices(w * h, |i| {
            let z = depth.data()[i];
            if !(z > 0.0) {
                return None;
            }
            PixelOptics::compute([(i % w) as f64, (i / w) as f64], z, rig, model, grid).ok()
        });
        Self { width: w, height: h, proj_w: rig.projector.width, proj_h: rig.projector.height, optics }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn projector_size(&self) -> (u32, u32) {
        (self.proj_w, self.proj_h)
    }

    pub fn optics(&self, x: usize, y: usize) -> Option<&PixelOptics> {
        self.optics[y * self.width + x].as_ref()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.optics.iter().map(|o| o.is_some()).collect()
    }

    pub fn render(
        &self,
        pattern: &Pattern,
        reflectance: &Cube,
        responses: &ResponseSet,
        eta: &EfficiencySet,
        settings: &RenderSettings,
    ) -> Image {
        let w = self.width;
        let rows = par::map_indices(self.height, |y| {
            let mut row = vec![0.0; 3 * w];
            for x in 0..w {
                let Some(o) = self.optics(x, y) else { continue };
                let drive = pattern_drive(o, pattern, eta, self.proj_w, self.proj_h);
                let rgb = shade(reflectance.spectrum(x, y), &drive, o.inv_d2, responses, settings);
                row[3 * x..3 * x + 3].copy_from_slice(&rgb);
            }
            row
        });
        Image::from_data(w, self.height, rows.concat()).expect("row sizes match")
    }

    pub fn render_set(
        &self,
        set: &PatternSet,
        reflectance: &Cube,
        responses: &ResponseSet,
        eta: &EfficiencySet,
        settings: &RenderSettings,
    ) -> CaptureStack {
        let frames = set.iter().map(|p| self.render(p, reflectance, responses, eta, settings)).collect();
        CaptureStack {
            width: self.width,
            height: self.height,
            kind: set.kind,
            frames,
            valid: self.valid_mask(),
            meta: CaptureMeta { gain: settings.gain, ..CaptureMeta::default() },
        }
    }
}

/// Capture settings recorded with a stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureMeta {
    pub noise_sigma: f64,
    pub seed: Option<u64>,
    pub exposure: f64,
    pub intensity: f64,
    pub gain: f64,
}

impl Default for CaptureMeta {
    fn default() -> Self {
        Self { noise_sigma: 0.0, seed: None, exposure: 1.0, intensity: 1.0, gain: 1.0 }
    }
}

/// Frames captured under one pattern set.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureStack {
    pub width: usize,
    pub height: usize,
    pub kind: PatternSetKind,
    pub frames: Vec<Image>,
    /// Pixels whose optics were computable (depth defined, inside the model).
    pub valid: Vec<bool>,
    pub meta: CaptureMeta,
}

impl CaptureStack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Gray level of pixel (x, y) in every frame.
    pub fn gray_trace(&self, x: usize, y: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.gray(x, y)).collect()
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }
}

/// Render one pattern (convenience over [`IlluminationPlan`]).
pub fn render(
    pattern: &Pattern,
    scene: &Scene,
    rig: &Rig,
    model: &CorrespondenceModel,
    responses: &ResponseSet,
    eta: &EfficiencySet,
    settings: &RenderSettings,
) -> (Image, Vec<bool>) {
    let plan = IlluminationPlan::new(scene.depth(), rig, model, scene.grid());
    (plan.render(pattern, scene.reflectance(), responses, eta, settings), plan.valid_mask())
}

pub fn render_stack(
    set: &PatternSet,
    scene: &Scene,
    rig: &Rig,
    model: &CorrespondenceModel,
    responses: &ResponseSet,
    eta: &EfficiencySet,
    settings: &RenderSettings,
) -> CaptureStack {
    IlluminationPlan::new(scene.depth(), rig, model, scene.grid()).render_set(set, scene.reflectance(), responses, eta, settings)
}

/// Adds N(0, σ²) noise to every sample and clamps at zero.
///
/// Each (frame, row) pair draws from its own ChaCha stream keyed by the seed,
/// so the result does not depend on how rows are distributed over threads.
pub fn add_noise(stack: &CaptureStack, sigma: f64, seed: u64) -> Result<CaptureStack> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument("noise sigma must be non-negative".into()));
    }
    let mut out = stack.clone();
    out.meta.noise_sigma = sigma;
    out.meta.seed = Some(seed);
    if sigma == 0.0 {
        return Ok(out);
    }
    let h = stack.height;
    let frames = par::map_indices(stack.frames.len() * h, |i| {
        let (f, y) = (i / h, i % h);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((f as u64) << 32) | y as u64);
        stack.frames[f]
            .row(y)
            .iter()
            .map(|&v| {
                let n: f64 = StandardNormal.sample(&mut rng);
                (v + sigma * n).max(0.0)
            })
            .collect::<Vec<f64>>()
    });
    for (f, frame) in out.frames.iter_mut().enumerate() {
        for (y, row) in frame.rows_mut().enumerate() {
            row.copy_from_slice(&frames[f * h + y]);
        }
    }
    Ok(out)
}

/// One capture setting: exposure time scale and projector intensity scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdrSetting {
    pub exposure: f64,
    pub intensity: f64,
}

impl HdrSetting {
    pub fn scale(&self) -> f64 {
        self.exposure * self.intensity
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdrConfig {
    pub low: HdrSetting,
    pub high: HdrSetting,
    pub saturation: f64,
    pub black_level: f64,
    /// Normalized levels between which the hat weight is 1.
    pub plateau: (f64, f64),
}

impl Default for HdrConfig {
    fn default() -> Self {
        Self {
            low: HdrSetting { exposure: 160.0, intensity: 0.2 },
            high: HdrSetting { exposure: 320.0, intensity: 0.8 },
            saturation: 1.0,
            black_level: 0.0,
            plateau: (0.05, 0.95),
        }
    }
}

impl HdrConfig {
    fn validate(&self) -> Result<()> {
        if !(self.low.scale() > 0.0 && self.high.scale() > 0.0 && self.saturation > 0.0) {
            return Err(Error::InvalidArgument("HDR scales and saturation must be positive".into()));
        }
        let (a, b) = self.plateau;
        if !(0.0 < a && a < b && b < 1.0) {
            return Err(Error::InvalidArgument("HDR plateau must satisfy 0 < lo < hi < 1".into()));
        }
        Ok(())
    }

    /// Hat weight of a reading normalized by saturation.
    pub fn hat(&self, v: f64) -> f64 {
        let t = v / self.saturation;
        let (a, b) = self.plateau;
        if !(t > 0.0) || t >= 1.0 {
            0.0
        } else if t < a {
            t / a
        } else if t > b {
            (1.0 - t) / (1.0 - b)
        } else {
            1.0
        }
    }
}

fn capture(stack: &CaptureStack, s: HdrSetting, cfg: &HdrConfig) -> CaptureStack {
    let mut out = stack.clone();
    let k = s.scale();
    for f in &mut out.frames {
        for v in f.data_mut() {
            *v = (cfg.black_level + *v * k).min(cfg.saturation);
        }
    }
    out.meta.exposure = s.exposure;
    out.meta.intensity = s.intensity;
    out
}

/// Low and high captures of a radiance stack, clipped at saturation.
pub fn simulate_hdr_pair(radiance: &CaptureStack, cfg: &HdrConfig) -> Result<(CaptureStack, CaptureStack)> {
    cfg.validate()?;
    Ok((capture(radiance, cfg.low, cfg), capture(radiance, cfg.high, cfg)))
}

/// Merged radiance plus per-pixel saturation flags.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrMerge {
    pub stack: CaptureStack,
    /// Pixel saturated in both captures in at least one frame.
    pub saturated: Vec<bool>,
}

/// Black-subtract, normalize and hat-weight the two captures.
pub fn merge_hdr(low: &CaptureStack, high: &CaptureStack, cfg: &HdrConfig) -> Result<HdrMerge> {
    cfg.validate()?;
    if low.frames.len() != high.frames.len() || low.width != high.width || low.height != high.height {
        return Err(Error::InvalidArgument("HDR captures differ in shape".into()));
    }
    let (kl, kh) = (cfg.low.scale(), cfg.high.scale());
    let weight = |v: f64| cfg.hat(v).min(cfg.hat(v - cfg.black_level));
    let mut out = low.clone();
    out.meta.exposure = 1.0;
    out.meta.intensity = 1.0;
    let mut saturated = vec![false; low.width * low.height];
    for (f, frame) in out.frames.iter_mut().enumerate() {
        let (a, b) = (low.frames[f].data(), high.frames[f].data());
        for (i, v) in frame.data_mut().iter_mut().enumerate() {
            let (rl, rh) = ((a[i] - cfg.black_level) / kl, (b[i] - cfg.black_level) / kh);
            let (wl, wh) = (weight(a[i]), weight(b[i]));
            *v = if wl + wh > 0.0 {
                (wl * rl + wh * rh) / (wl + wh)
            } else if a[i] >= cfg.saturation {
                saturated[i / 3] = true;
                rl
            } else if b[i] >= cfg.saturation {
                rl.max(0.0)
            } else {
                0.0
            }
            .max(0.0);
        }
    }
    Ok(HdrMerge { stack: out, saturated })
}
