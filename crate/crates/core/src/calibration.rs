//! Diffraction efficiency, response curves and correspondence samples from
//! captures of a flat target through bandpass filters.

use alloc::vec;
use alloc::vec::Vec;

use crate::correspondence::CorrespondenceSample;
use crate::error::{Error, Result};
use crate::math;
use crate::optics::{Order, OrderSet};
use crate::par;
use crate::patterns::PatternSetKind;
use crate::sim::{shade, CaptureStack, RenderSettings};
use crate::spectra::{EfficiencySet, ResponseSet, SpectralCurve, WavelengthGrid};

/// Boxcar transmission: 1 where `|λ − center| < width / 2`, else 0.
pub fn bandpass(grid: WavelengthGrid, center_nm: f64, width_nm: f64) -> SpectralCurve {
    SpectralCurve::from_fn(grid, |l| if math::abs(l - center_nm) < 0.5 * width_nm { 1.0 } else { 0.0 })
}

/// Filter centers every `step` nm across the grid.
pub fn filter_centers(grid: &WavelengthGrid, step: f64) -> Vec<f64> {
    let n = math::floor((grid.end_nm() - grid.start_nm()) / step + 1e-9) as usize + 1;
    (0..n).map(|i| grid.start_nm() + step * i as f64).collect()
}

/// One stack captured through a bandpass filter, flat target at known depth.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCapture {
    pub stack: CaptureStack,
    pub filter_center_nm: f64,
    pub filter_width_nm: f64,
    pub depth_mm: f64,
    pub target_reflectance: f64,
}

impl CalibrationCapture {
    pub fn new(stack: CaptureStack, center: f64, width: f64, depth: f64, reflectance: f64) -> Result<Self> {
        if !(reflectance > 0.0 && reflectance <= 1.0) {
            return Err(Error::InvalidArgument(alloc::format!("target reflectance {reflectance} outside (0, 1]")));
        }
        if !(width > 0.0) || !(depth > 0.0) {
            return Err(Error::InvalidArgument("filter width and depth must be positive".into()));
        }
        Ok(Self { stack, filter_center_nm: center, filter_width_nm: width, depth_mm: depth, target_reflectance: reflectance })
    }
}

/// A run of consecutive frames above the trace threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub first: usize,
    pub last: usize,
    pub sum: f64,
    pub max: f64,
    /// Intensity-weighted mean frame index.
    pub centroid: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Runs of frames above `max(3 · median, 0.02 · max)`.
pub fn find_peaks(trace: &[f64]) -> Vec<Peak> {
    let max = trace.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let thr = (3.0 * median(trace)).max(0.02 * max);
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < trace.len() {
        if trace[i] <= thr {
            i += 1;
            continue;
        }
        let first = i;
        let (mut sum, mut m, mut moment) = (0.0, 0.0f64, 0.0);
        while i < trace.len() && trace[i] > thr {
            sum += trace[i];
            m = m.max(trace[i]);
            moment += trace[i] * i as f64;
            i += 1;
        }
        peaks.push(Peak { first, last: i - 1, sum, max: m, centroid: moment / sum });
    }
    peaks
}

/// Peaks of a trace labelled by order: tallest is the zero order, the rest
/// are −1 or +1 by which side of it they fall on.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LabelledPeaks {
    pub zero: Option<Peak>,
    pub minus: Option<Peak>,
    pub plus: Option<Peak>,
}

impl LabelledPeaks {
    pub fn get(&self, order: Order) -> Option<Peak> {
        match order {
            Order::Minus => self.minus,
            Order::Zero => self.zero,
            Order::Plus => self.plus,
        }
    }

    pub fn count(&self) -> usize {
        [self.zero, self.minus, self.plus].iter().filter(|p| p.is_some()).count()
    }
}

/// Why a trace could not be labelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceIssue {
    NoSignal,
    Ambiguous,
}

pub fn label_peaks(trace: &[f64]) -> core::result::Result<LabelledPeaks, TraceIssue> {
    let peaks = find_peaks(trace);
    let Some(zi) = (0..peaks.len()).max_by(|&a, &b| peaks[a].max.total_cmp(&peaks[b].max).then(b.cmp(&a))) else {
        return Err(TraceIssue::NoSignal);
    };
    let zero = peaks[zi];
    let mut out = LabelledPeaks { zero: Some(zero), ..Default::default() };
    for (k, p) in peaks.iter().enumerate() {
        if k == zi {
            continue;
        }
        let slot = if p.centroid > zero.centroid { &mut out.plus } else { &mut out.minus };
        if slot.is_some() {
            return Err(TraceIssue::Ambiguous);
        }
        *slot = Some(*p);
    }
    Ok(out)
}

/// Ratio estimates at one filter wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaMeasurement {
    pub wavelength_nm: f64,
    pub minus: Option<f64>,
    pub plus: Option<f64>,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaEstimate {
    pub eta: EfficiencySet,
    pub measurements: Vec<EtaMeasurement>,
    /// Orders never seen in any capture.
    pub uncalibrated: OrderSet,
}

fn ratio_at(capture: &CalibrationCapture) -> Result<EtaMeasurement> {
    let st = &capture.stack;
    if !matches!(st.kind, PatternSetKind::Scanline(_)) {
        return Err(Error::InvalidArgument("efficiency captures must be line or block sweeps".into()));
    }
    let last = st.frames.len().saturating_sub(1);
    let per_pixel = par::map_indices(st.width * st.height, |i| {
        let trace = st.gray_trace(i % st.width, i / st.width);
        let labels = label_peaks(&trace).ok()?;
        let zero = labels.zero?;
        let interior = |p: &Peak| p.first > 0 && p.last < last;
        if !interior(&zero) {
            return None;
        }
        Some((labels.minus.filter(interior).map(|p| p.sum), zero.sum, labels.plus.filter(interior).map(|p| p.sum)))
    });
    let (mut sm, mut zm, mut sp, mut zp, mut pixels) = (0.0, 0.0, 0.0, 0.0, 0usize);
    let (mut seen_m, mut seen_p) = (false, false);
    for (m, z, p) in per_pixel.into_iter().flatten() {
        pixels += 1;
        if let Some(m) = m {
            sm += m;
            zm += z;
            seen_m = true;
        }
        if let Some(p) = p {
            sp += p;
            zp += z;
            seen_p = true;
        }
    }
    if pixels == 0 {
        return Err(Error::ZeroReference(capture.filter_center_nm));
    }
    let ratio = |s: f64, z: f64, seen: bool| -> Result<Option<f64>> {
        if !seen {
            return Ok(None);
        }
        if !(z > 0.0) {
            return Err(Error::ZeroReference(capture.filter_center_nm));
        }
        Ok(Some(s / z))
    };
    Ok(EtaMeasurement {
        wavelength_nm: capture.filter_center_nm,
        minus: ratio(sm, zm, seen_m)?,
        plus: ratio(sp, zp, seen_p)?,
        pixels,
    })
}

fn interpolate(points: &[(f64, f64)], grid: WavelengthGrid) -> SpectralCurve {
    SpectralCurve::from_fn(grid, |l| {
        if l <= points[0].0 {
            return points[0].1;
        }
        for w in points.windows(2) {
            if l <= w[1].0 {
                let t = (l - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + t * (w[1].1 - w[0].1);
            }
        }
        points[points.len() - 1].1
    })
}

/// First-order efficiencies relative to the zero order (η₀ ≡ 1) from sweeps
/// with each column lit the same number of times, one capture per filter
/// wavelength. Each estimate is the ratio of summed plateau intensities over
/// pixels where both peaks lie inside the sweep, then linearly interpolated
/// onto `grid`.
pub fn estimate_eta(captures: &[CalibrationCapture], grid: WavelengthGrid) -> Result<EtaEstimate> {
    if captures.is_empty() {
        return Err(Error::InvalidArgument("no efficiency captures".into()));
    }
    let mut measurements = captures.iter().map(ratio_at).collect::<Result<Vec<_>>>()?;
    measurements.sort_by(|a, b| a.wavelength_nm.total_cmp(&b.wavelength_nm));
    let curve = |pick: fn(&EtaMeasurement) -> Option<f64>| {
        let pts: Vec<(f64, f64)> = measurements.iter().filter_map(|m| pick(m).map(|v| (m.wavelength_nm, v))).collect();
        (!pts.is_empty()).then(|| interpolate(&pts, grid))
    };
    let minus = curve(|m| m.minus);
    let plus = curve(|m| m.plus);
    let uncalibrated = OrderSet { minus: minus.is_none(), plus: plus.is_none() };
    let eta = EfficiencySet::new(SpectralCurve::constant(grid, 1.0), minus, plus)?;
    Ok(EtaEstimate { eta, measurements, uncalibrated })
}

/// Pixels the extraction could not use, and why.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkippedPixel {
    pub pixel: [usize; 2],
    pub wavelength_nm: f64,
    pub depth_mm: f64,
    pub issue: ExtractionIssue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionIssue {
    NoSignal,
    Ambiguous,
    /// Only the zero order was found.
    NoFirstOrder,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extraction {
    pub samples: Vec<CorrespondenceSample>,
    pub skipped: Vec<SkippedPixel>,
    /// Pixels where fewer first orders than expected were found.
    pub partial: usize,
}

/// Projector columns of the first-order peaks in scanline traces taken
/// through narrow bandpass filters. A peak's column is the line center at
/// its intensity-weighted frame centroid; peaks touching the first or last
/// frame are dropped. Output is sorted by pixel, then
/// depth, wavelength and order.
pub fn extract_correspondence_samples(
    captures: &[CalibrationCapture],
    pixels: &[[usize; 2]],
    expected: OrderSet,
) -> Result<Extraction> {
    let mut out = Extraction::default();
    for cap in captures {
        let PatternSetKind::Scanline(spec) = cap.stack.kind else {
            return Err(Error::InvalidArgument("correspondence captures must be scanline sweeps".into()));
        };
        let st = &cap.stack;
        let results = par::map_indices(pixels.len(), |k| {
            let [x, y] = pixels[k];
            let labels = label_peaks(&st.gray_trace(x, y));
            (k, labels)
        });
        for (k, labels) in results {
            let [x, y] = pixels[k];
            let skip = |issue| SkippedPixel { pixel: [x, y], wavelength_nm: cap.filter_center_nm, depth_mm: cap.depth_mm, issue };
            let labels = match labels {
                Ok(l) => l,
                Err(TraceIssue::NoSignal) => {
                    out.skipped.push(skip(ExtractionIssue::NoSignal));
                    continue;
                }
                Err(TraceIssue::Ambiguous) => {
                    out.skipped.push(skip(ExtractionIssue::Ambiguous));
                    continue;
                }
            };
            if labels.minus.is_none() && labels.plus.is_none() {
                out.skipped.push(skip(ExtractionIssue::NoFirstOrder));
                continue;
            }
            let mut found = 0;
            for order in Order::FIRST {
                if let Some(p) = labels.get(order).filter(|p| p.first > 0 && p.last + 1 < st.frames.len()) {
                    found += 1;
                    out.samples.push(CorrespondenceSample {
                        pixel: [x as f64, y as f64],
                        depth_mm: cap.depth_mm,
                        order,
                        wavelength_nm: cap.filter_center_nm,
                        column: spec.shift as f64 * p.centroid + (spec.line_width as f64 - 1.0) / 2.0,
                    });
                }
            }
            if found < expected.len() {
                out.partial += 1;
            }
        }
    }
    out.samples.sort_by(|a, b| {
        (a.pixel[1], a.pixel[0], a.depth_mm, a.wavelength_nm, a.order.value())
            .partial_cmp(&(b.pixel[1], b.pixel[0], b.depth_mm, b.wavelength_nm, b.order.value()))
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    Ok(out)
}

/// A patch of known reflectance seen under a uniform projector color.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchObservation {
    pub reflectance: Vec<f64>,
    /// Projector channel levels.
    pub drive: [f64; 3],
    /// Per-band factor multiplying reflectance: gain · η₀ / d².
    pub scale: Vec<f64>,
    pub rgb: [f64; 3],
}

/// Noiseless observations of `patches` under each projector color in
/// `drives`, zero order only.
pub fn observe_patches(
    patches: &[SpectralCurve],
    drives: &[[f64; 3]],
    responses: &ResponseSet,
    eta: &EfficiencySet,
    gain: f64,
    inv_d2: f64,
) -> Vec<PatchObservation> {
    let n = eta.grid().len();
    let scale: Vec<f64> = (0..n).map(|j| gain * inv_d2 * eta.eta(Order::Zero, j)).collect();
    let settings = RenderSettings { gain, filter: None };
    let mut out = Vec::with_capacity(patches.len() * drives.len());
    for h in patches {
        for &d in drives {
            let drive: Vec<[f64; 3]> = (0..n).map(|j| d.map(|v| v * eta.eta(Order::Zero, j))).collect();
            let rgb = shade(h.values(), &drive, inv_d2, responses, &settings);
            out.push(PatchObservation { reflectance: h.values().to_vec(), drive: d, scale: scale.clone(), rgb });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    /// Smoothness weight on both camera and projector curves.
    pub weight: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { weight: 0.005, max_iters: 2000, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub responses: ResponseSet,
    pub initial_loss: f64,
    pub loss: f64,
    pub data_loss: f64,
    pub initial_data_loss: f64,
    pub iterations: usize,
}

struct Objective<'a> {
    obs: &'a [PatchObservation],
    n: usize,
    w: f64,
}

impl Objective<'_> {
    // x = [cam R, G, B, proj R, G, B], each n long
    fn data(&self, x: &[f64]) -> f64 {
        self.obs.iter().map(|o| self.residual(x, o).iter().map(|r| r * r).sum::<f64>()).sum()
    }

    fn residual(&self, x: &[f64], o: &PatchObservation) -> [f64; 3] {
        let n = self.n;
        let mut pred = [0.0; 3];
        for j in 0..n {
            let l = (0..3).map(|c| x[(3 + c) * n + j] * o.drive[c]).sum::<f64>();
            let k = o.reflectance[j] * o.scale[j] * l;
            for (c, p) in pred.iter_mut().enumerate() {
                *p += x[c * n + j] * k;
            }
        }
        core::array::from_fn(|c| pred[c] - o.rgb[c])
    }

    fn reg(&self, x: &[f64]) -> f64 {
        x.chunks(self.n).map(crate::spectra::roughness).sum::<f64>() * self.w
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.data(x) + self.reg(x)
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let n = self.n;
        g.iter_mut().for_each(|v| *v = 0.0);
        for o in self.obs {
            let r = self.residual(x, o);
            for j in 0..n {
                let l = (0..3).map(|c| x[(3 + c) * n + j] * o.drive[c]).sum::<f64>();
                let k = o.reflectance[j] * o.scale[j];
                let mut cam_r = 0.0;
                for c in 0..3 {
                    g[c * n + j] += 2.0 * r[c] * k * l;
                    cam_r += r[c] * x[c * n + j];
                }
                for c in 0..3 {
                    g[(3 + c) * n + j] += 2.0 * cam_r * k * o.drive[c];
                }
            }
        }
        for curve in 0..6 {
            let s = &x[curve * n..(curve + 1) * n];
            let gs = &mut g[curve * n..(curve + 1) * n];
            for j in 0..n.saturating_sub(1) {
                let d = 2.0 * self.w * (s[j + 1] - s[j]);
                gs[j] -= d;
                gs[j + 1] += d;
            }
        }
    }
}

/// Refines camera and projector curves to match patch observations by
/// projected gradient descent with backtracking; accepted steps never raise
/// the objective.
pub fn refine_responses(initial: &ResponseSet, obs: &[PatchObservation], opts: &RefineOptions) -> Result<Refinement> {
    let grid = *initial.grid();
    let n = grid.len();
    if obs.is_empty() {
        return Err(Error::InvalidArgument("no patch observations".into()));
    }
    for o in obs {
        if o.reflectance.len() != n || o.scale.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: o.reflectance.len().min(o.scale.len()) });
        }
    }
    let f = Objective { obs, n, w: opts.weight.max(0.0) };
    let mut x: Vec<f64> = (0..3)
        .flat_map(|c| initial.cam()[c].values().to_vec())
        .chain((0..3).flat_map(|c| initial.proj()[c].values().to_vec()))
        .collect();
    let initial_loss = f.value(&x);
    let initial_data_loss = f.data(&x);
    let mut fx = initial_loss;
    let mut g = vec![0.0; x.len()];
    let mut xn = vec![0.0; x.len()];
    let mut step = 1.0;
    let mut iterations = 0;
    for it in 0..opts.max_iters {
        iterations = it + 1;
        f.gradient(&x, &mut g);
        let mut accepted = false;
        for _ in 0..60 {
            let mut lin = 0.0;
            let mut dist2 = 0.0;
            for k in 0..x.len() {
                xn[k] = (x[k] - step * g[k]).max(0.0);
                let d = xn[k] - x[k];
                lin += g[k] * d;
                dist2 += d * d;
            }
            if dist2 == 0.0 {
                break;
            }
            let fnew = f.value(&xn);
            if fnew <= fx + lin + dist2 / (2.0 * step) && fnew <= fx {
                accepted = true;
                let rel = (fx - fnew) / fx.max(f64::MIN_POSITIVE);
                x.copy_from_slice(&xn);
                fx = fnew;
                step *= 1.5;
                if rel < opts.tol {
                    iterations = it + 1;
                    return finish(grid, x, initial_loss, initial_data_loss, fx, &f, iterations);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    finish(grid, x, initial_loss, initial_data_loss, fx, &f, iterations)
}

fn finish(
    grid: WavelengthGrid,
    x: Vec<f64>,
    initial_loss: f64,
    initial_data_loss: f64,
    loss: f64,
    f: &Objective<'_>,
    iterations: usize,
) -> Result<Refinement> {
    let n = grid.len();
    let curve = |k: usize| SpectralCurve::new(grid, x[k * n..(k + 1) * n].to_vec());
    let responses = ResponseSet::new([curve(0)?, curve(1)?, curve(2)?], [curve(3)?, curve(4)?, curve(5)?])?;
    Ok(Refinement { responses, initial_loss, loss, data_loss: f.data(&x), initial_data_loss, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::{exact_samples, CorrespondenceModel, PixelLattice};
    use crate::optics::Rig;
    use crate::patterns::gen_scanlines;
    use crate::scenes::{colorchecker_spectra, flat_target};
    use crate::sim::render_stack;

    fn demo() -> &'static (Rig, CorrespondenceModel) {
        static CELL: std::sync::OnceLock<(Rig, CorrespondenceModel)> = std::sync::OnceLock::new();
        CELL.get_or_init(|| {
            let rig = Rig::demo();
            let lattice = PixelLattice::spanning(64, 64, 5, 5).unwrap();
            let knots: Vec<f64> = (0..11).map(|i| 430.0 + 23.0 * i as f64).collect();
            let depths = [600.0, 700.0, 800.0, 900.0, 1000.0];
            let s = exact_samples(&rig, &lattice, &knots, &depths);
            (rig.clone(), CorrespondenceModel::fit(&s, lattice, &knots, 640).unwrap().with_depth_table(1.0).unwrap())
        })
    }

    fn capture(rig: &Rig, model: &CorrespondenceModel, eta: &EfficiencySet, center: f64, w: u32, s: u32, z: f64, gain: f64) -> CalibrationCapture {
        let g = *eta.grid();
        let scene = flat_target(16, 16, z, 0.99, g).unwrap();
        let set = gen_scanlines(640, 360, w, s).unwrap();
        let settings = RenderSettings { gain, filter: Some(bandpass(g, center, 10.0)) };
        let stack = render_stack(&set, &scene, rig, model, &ResponseSet::synthetic(g), eta, &settings);
        CalibrationCapture::new(stack, center, 10.0, z, 0.99).unwrap()
    }

    #[test]
    fn bandpass_is_open() {
        let g = WavelengthGrid::standard();
        let b = bandpass(g, 500.0, 10.0);
        assert_eq!(b.values().iter().filter(|v| **v > 0.0).count(), 1);
        assert_eq!(b.value(g.index_of(500.0).unwrap()), 1.0);
        assert_eq!(filter_centers(&g, 10.0).len(), 24);
    }

    #[test]
    fn peaks_and_labels() {
        let t = [0.0, 0.0, 0.2, 0.2, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.1, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let l = label_peaks(&t).unwrap();
        assert_eq!(l.zero.unwrap().centroid, 7.0);
        assert_eq!(l.minus.unwrap().centroid, 2.5);
        assert_eq!(l.plus.unwrap().centroid, 10.5);
        assert_eq!(label_peaks(&[0.0; 8]), Err(TraceIssue::NoSignal));
        let t = [0.3, 0.0, 0.3, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(label_peaks(&t), Err(TraceIssue::Ambiguous));
    }

    #[test]
    fn eta_flat_recovered() {
        let (rig, model) = demo();
        let g = WavelengthGrid::standard();
        let truth = EfficiencySet::new(
            SpectralCurve::constant(g, 1.0),
            Some(SpectralCurve::constant(g, 0.1)),
            Some(SpectralCurve::constant(g, 0.1)),
        )
        .unwrap();
        let caps: Vec<_> = [450.0, 550.0, 650.0].iter().map(|&c| capture(rig, model, &truth, c, 40, 20, 800.0, 1.0)).collect();
        let est = estimate_eta(&caps, g).unwrap();
        for j in 0..g.len() {
            assert!((est.eta.eta(Order::Plus, j) - 0.1).abs() < 1e-6);
            assert!((est.eta.eta(Order::Minus, j) - 0.1).abs() < 1e-6);
        }
        // exposure scaling cancels
        let scaled: Vec<_> = [450.0, 550.0, 650.0].iter().map(|&c| capture(rig, model, &truth, c, 40, 20, 800.0, 7.5)).collect();
        let est2 = estimate_eta(&scaled, g).unwrap();
        for (a, b) in est.measurements.iter().zip(&est2.measurements) {
            assert!((a.plus.unwrap() - b.plus.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_order_is_uncalibrated() {
        let (rig, model) = demo();
        let g = WavelengthGrid::standard();
        let mut rig = rig.clone();
        rig.grating = rig.grating.with_orders(OrderSet { minus: false, plus: true });
        let truth = EfficiencySet::synthetic(g);
        let caps = vec![capture(&rig, model, &truth, 550.0, 40, 20, 800.0, 1.0)];
        let est = estimate_eta(&caps, g).unwrap();
        assert!(est.uncalibrated.minus && !est.uncalibrated.plus);
        assert!(est.eta.get(Order::Minus).is_none());
    }

    #[test]
    fn samples_within_half_shift() {
        let (rig, model) = demo();
        let g = WavelengthGrid::standard();
        let eta = EfficiencySet::synthetic(g);
        let pixels: Vec<[usize; 2]> = (0..4).flat_map(|y| (0..4).map(move |x| [4 * x + 1, 4 * y + 2])).collect();
        let caps: Vec<_> = [480.0, 560.0, 640.0].iter().map(|&c| capture(rig, model, &eta, c, 5, 2, 800.0, 1.0)).collect();
        let ex = extract_correspondence_samples(&caps, &pixels, OrderSet::BOTH).unwrap();
        assert_eq!(ex.samples.len(), pixels.len() * 3 * 2);
        for s in &ex.samples {
            let truth = model.query(s.pixel, s.depth_mm, s.order, s.wavelength_nm).unwrap();
            assert!((s.column - truth).abs() <= 1.0, "{} vs {truth}", s.column);
            let q0 = crate::correspondence::zero_order(s.pixel, s.depth_mm, rig).unwrap()[0];
            assert_eq!(s.column > q0, s.order == Order::Plus);
        }
        let black = {
            let mut c = caps[0].clone();
            c.stack.frames.iter_mut().for_each(|f| *f = f.map(|_| 0.0));
            c
        };
        let ex = extract_correspondence_samples(&[black], &pixels, OrderSet::BOTH).unwrap();
        assert!(ex.samples.is_empty());
        assert!(ex.skipped.iter().all(|s| s.issue == ExtractionIssue::NoSignal));
    }

    fn patch_setup() -> (Vec<PatchObservation>, ResponseSet) {
        let g = WavelengthGrid::standard();
        let truth = ResponseSet::synthetic(g);
        let eta = EfficiencySet::synthetic(g);
        let patches: Vec<SpectralCurve> = colorchecker_spectra(g).into_iter().take(21).collect();
        let drives = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]];
        (observe_patches(&patches, &drives, &truth, &eta, 1.0, 1.0), truth)
    }

    #[test]
    fn refine_fixed_point() {
        let (obs, truth) = patch_setup();
        let r = refine_responses(&truth, &obs, &RefineOptions { weight: 0.0, ..Default::default() }).unwrap();
        assert!(r.initial_loss < 1e-20);
        for c in 0..3 {
            for (a, b) in r.responses.cam()[c].values().iter().zip(truth.cam()[c].values()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn refine_reduces_perturbed_loss() {
        let (obs, truth) = patch_setup();
        let g = *truth.grid();
        let bump = |c: &SpectralCurve, k: f64| SpectralCurve::new(g, c.values().iter().enumerate().map(|(j, v)| v * (1.0 + k * libm::sin(j as f64))).collect()).unwrap();
        let init = ResponseSet::new(
            [bump(&truth.cam()[0], 0.1), bump(&truth.cam()[1], -0.1), bump(&truth.cam()[2], 0.1)],
            [bump(&truth.proj()[0], -0.1), bump(&truth.proj()[1], 0.1), bump(&truth.proj()[2], -0.1)],
        )
        .unwrap();
        let r = refine_responses(&init, &obs, &RefineOptions::default()).unwrap();
        assert!(r.loss <= r.initial_loss);
        assert!(r.data_loss <= 0.1 * r.initial_data_loss, "{} vs {}", r.data_loss, r.initial_data_loss);

        let heavy = refine_responses(&init, &obs, &RefineOptions { weight: 1e6, max_iters: 300, ..Default::default() }).unwrap();
        for c in 0..3 {
            assert!(heavy.responses.cam()[c].roughness() <= init.cam()[c].roughness());
            assert!(heavy.responses.proj()[c].roughness() <= init.proj()[c].roughness());
        }
    }
}
