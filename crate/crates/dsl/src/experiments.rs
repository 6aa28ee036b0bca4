//! Reusable experiment pipelines: model construction, capture simulation,
//! noise sweeps and a simulated calibration session.

use dsl_core::calibration::{
    bandpass, estimate_eta, extract_correspondence_samples, filter_centers, observe_patches, refine_responses,
    CalibrationCapture, EtaEstimate, Extraction, RefineOptions, Refinement,
};
use dsl_core::correspondence::{exact_samples, zero_order, CorrespondenceModel, CorrespondenceSample, PixelLattice};
use dsl_core::image::ScalarMap;
use dsl_core::metrics::{depth_error, DepthErrorStats};
use dsl_core::patterns::{gen_binary_codes, gen_references, gen_scanlines};
use dsl_core::reconstruction::{reconstruct_depth, DecodeOptions, DepthOptions, DepthRange, HyperspectralOptions, References, Threshold};
use dsl_core::scenes;
use dsl_core::sim::{add_noise, render_stack, CaptureStack, RenderSettings, Scene};
use dsl_core::{EfficiencySet, Order, ResponseSet, Rig, SpectralCurve, WavelengthGrid};

use crate::config::{ExperimentConfig, PatternConfig, ThresholdMode, BUILTIN_SCENES};
use crate::error::{read_input, DslError, Result};
use crate::{formats, manifest};

/// Offset between the binary-stack noise seed and the other stacks' seeds.
pub const REFERENCE_SEED_OFFSET: u64 = 1000;
pub const SCANLINE_SEED_OFFSET: u64 = 2000;

pub fn builtin_rig(name: &str) -> Option<Rig> {
    match name {
        "demo" => Some(Rig::demo()),
        "prototype" => Some(Rig::prototype()),
        _ => None,
    }
}

/// About one lattice node per 15 camera pixels, at least 2 per axis.
pub fn default_lattice(rig: &Rig) -> [usize; 2] {
    let n = |len: u32| (len.saturating_sub(1) as usize).div_ceil(15).max(1) + 1;
    [n(rig.camera.width), n(rig.camera.height)]
}

/// Fits the correspondence surrogate to exact grating-solver samples.
pub fn fit_model(
    rig: &Rig,
    counts: [usize; 2],
    knots: &[f64],
    depths: &[f64],
    table_step: Option<f64>,
) -> dsl_core::Result<(CorrespondenceModel, Vec<CorrespondenceSample>)> {
    let lattice = PixelLattice::spanning(rig.camera.width, rig.camera.height, counts[0], counts[1])?;
    let samples = exact_samples(rig, &lattice, knots, depths);
    let model = CorrespondenceModel::fit(&samples, lattice, knots, rig.projector.width)?;
    let model = match table_step {
        Some(s) => model.with_depth_table(s)?,
        None => model,
    };
    Ok((model, samples))
}

pub fn builtin_scene(name: &str, rig: &Rig, z: f64, grid: WavelengthGrid, seed: u64) -> dsl_core::Result<Scene> {
    let (w, h) = (rig.camera.width as usize, rig.camera.height as usize);
    match name {
        "colorchecker" => scenes::colorchecker_scene(w, h, z, grid),
        "boxcar" => scenes::boxcar_scene(w, h, z, grid),
        "two-box" => {
            // disparities chosen so the background sits at `z`
            let b = rig.baseline() * rig.camera.fx;
            let d = b / z;
            scenes::two_box_scene(w, h, b, [d, 1.25 * d, 1.1 * d], grid)
        }
        "planar" => scenes::random_planar_scene(w, h, z, [0.4, 0.2], (0.2, 0.95), grid, seed),
        _ => Err(dsl_core::Error::InvalidArgument(format!("unknown scene {name:?}"))),
    }
}

/// Pixels whose true zero-order correspondence lands inside the projector,
/// the only pixels binary codes can address.
pub fn lit_mask(rig: &Rig, depth: &ScalarMap) -> Vec<bool> {
    let (pw, ph) = (rig.projector.width as f64, rig.projector.height as f64);
    (0..depth.data().len())
        .map(|i| {
            let (x, y) = (i % depth.width(), i / depth.width());
            let z = depth.data()[i];
            z > 0.0
                && zero_order([x as f64, y as f64], z, rig)
                    .is_ok_and(|q| (0.5..pw - 0.5).contains(&q[0]) && (0.5..ph - 0.5).contains(&q[1]))
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    v.retain(|x| x.is_finite() && *x > 0.0);
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    Some(v[v.len() / 2])
}

/// Everything needed to render and reconstruct one experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub rig: Rig,
    pub scene: Scene,
    pub model: CorrespondenceModel,
    pub responses: ResponseSet,
    pub eta: EfficiencySet,
    pub settings: RenderSettings,
}

pub fn load_rig(cfg: &ExperimentConfig) -> Result<Rig> {
    match builtin_rig(&cfg.rig) {
        Some(r) => Ok(r),
        None => manifest::load_rig(std::path::Path::new(&cfg.rig)),
    }
}

/// Built-in scenes use the standard 430–660 nm grid.
pub fn load_scene(cfg: &ExperimentConfig, rig: &Rig) -> Result<Scene> {
    if BUILTIN_SCENES.contains(&cfg.scene.as_str()) {
        return Ok(builtin_scene(&cfg.scene, rig, cfg.scene_depth_mm, WavelengthGrid::standard(), cfg.seed())?);
    }
    let scene = manifest::load_scene(std::path::Path::new(&cfg.scene))?;
    if scene.width() != rig.camera.width as usize || scene.height() != rig.camera.height as usize {
        return Err(DslError::Config(format!(
            "scene is {}x{} but the camera is {}x{}",
            scene.width(),
            scene.height(),
            rig.camera.width,
            rig.camera.height
        )));
    }
    Ok(scene)
}

pub fn load_responses(cfg: &ExperimentConfig, grid: WavelengthGrid) -> Result<ResponseSet> {
    let load = |p: &std::path::Path| -> Result<[SpectralCurve; 3]> {
        let curves = formats::decode_rgb_curves(&read_input(p, "response CSV")?).map_err(|e| e.at(p))?;
        Ok(curves.map(|c| dsl_core::spectra::resample(&c, &grid)).into_iter().collect::<dsl_core::Result<Vec<_>>>()?.try_into().expect("3"))
    };
    let synthetic = ResponseSet::synthetic(grid);
    let cam = match &cfg.camera_response {
        Some(p) => load(p)?,
        None => synthetic.cam().clone(),
    };
    let proj = match &cfg.projector_response {
        Some(p) => load(p)?,
        None => synthetic.proj().clone(),
    };
    Ok(ResponseSet::new(cam, proj)?)
}

pub fn load_efficiency(cfg: &ExperimentConfig, grid: WavelengthGrid) -> Result<EfficiencySet> {
    match &cfg.efficiency {
        None => Ok(EfficiencySet::synthetic(grid)),
        Some(p) => {
            let e = formats::decode_efficiency(&read_input(p, "efficiency CSV")?).map_err(|e| e.at(p))?;
            if !e.grid().same_as(&grid) {
                return Err(DslError::Config(format!("{}: efficiency grid differs from the scene grid", p.display())));
            }
            Ok(e)
        }
    }
}

pub fn load_model(cfg: &ExperimentConfig, rig: &Rig) -> Result<CorrespondenceModel> {
    match &cfg.model.path {
        Some(p) => formats::decode_model(&read_input(p, "correspondence model (run fit-correspondence)")?).map_err(|e| e.at(p)),
        None => {
            let counts = cfg.model.lattice.unwrap_or_else(|| default_lattice(rig));
            Ok(fit_model(rig, counts, &cfg.model.knots_nm, &cfg.model.depths_mm, cfg.model.table_step_mm)?.0)
        }
    }
}

impl Setup {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let rig = load_rig(cfg)?;
        let scene = load_scene(cfg, &rig)?;
        let grid = *scene.grid();
        let responses = load_responses(cfg, grid)?;
        let eta = load_efficiency(cfg, grid)?;
        let model = load_model(cfg, &rig)?;
        let settings = match cfg.gain {
            Some(gain) => RenderSettings { gain, filter: None },
            None => {
                let z = median(scene.depth().data().to_vec()).unwrap_or(cfg.scene_depth_mm);
                RenderSettings::normalized(&rig, &responses, &eta, z)?
            }
        };
        Ok(Self { rig, scene, model, responses, eta, settings })
    }
}

pub fn depth_options(cfg: &ExperimentConfig) -> DepthOptions {
    let threshold = match cfg.threshold {
        ThresholdMode::Relative => Threshold::Relative(cfg.tau),
        ThresholdMode::Absolute => Threshold::Absolute(cfg.tau),
    };
    DepthOptions {
        decode: DecodeOptions { threshold, ..DecodeOptions::default() },
        range: DepthRange { min: cfg.depth_range_mm[0], max: cfg.depth_range_mm[1] },
    }
}

pub fn hyper_options(cfg: &ExperimentConfig) -> Result<HyperspectralOptions> {
    Ok(HyperspectralOptions {
        kappa_lambda: cfg.kappa_lambda,
        kappa_interior: cfg.kappa_interior,
        kappa_sigma: cfg.kappa_sigma,
        orders: manifest::parse_orders(&cfg.orders).map_err(DslError::Config)?,
        ..HyperspectralOptions::default()
    })
}

/// Binary, reference (black, white) and scanline stacks of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Captures {
    pub binary: CaptureStack,
    pub references: CaptureStack,
    pub scan: CaptureStack,
}

impl Captures {
    pub fn frame_count(&self) -> usize {
        self.binary.len() + self.references.len() + self.scan.len()
    }

    pub fn references(&self) -> References<'_> {
        References { black: &self.references.frames[0], white: &self.references.frames[1] }
    }
}

/// Renders all three stacks and adds noise; each stack draws from its own
/// seed offset from `seed`.
pub fn simulate_captures(setup: &Setup, patterns: &PatternConfig, sigma: f64, seed: u64) -> Result<Captures> {
    let Setup { rig, scene, model, responses, eta, settings } = setup;
    let (pw, ph) = (rig.projector.width, rig.projector.height);
    let render = |set| render_stack(&set, scene, rig, model, responses, eta, settings);
    let binary = render(gen_binary_codes(pw, ph, patterns.complement)?);
    let references = render(gen_references(pw, ph));
    let scan = render(gen_scanlines(pw, ph, patterns.line_width, patterns.shift)?);
    Ok(Captures {
        binary: add_noise(&binary, sigma, seed)?,
        references: add_noise(&references, sigma, seed.wrapping_add(REFERENCE_SEED_OFFSET))?,
        scan: add_noise(&scan, sigma, seed.wrapping_add(SCANLINE_SEED_OFFSET))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub seed: u64,
    pub stats: DepthErrorStats,
    /// Lit pixels that decoded to a depth.
    pub decoded_fraction: f64,
}

/// Depth error of binary decoding against ground truth for every noise level
/// and seed, over pixels the projector can light.
pub fn noise_sweep(setup: &Setup, complement: bool, sigmas: &[f64], seeds: &[u64], opts: &DepthOptions) -> Result<Vec<SweepRow>> {
    let Setup { rig, scene, model, responses, eta, settings } = setup;
    let (pw, ph) = (rig.projector.width, rig.projector.height);
    let binary = render_stack(&gen_binary_codes(pw, ph, complement)?, scene, rig, model, responses, eta, settings);
    let refs = render_stack(&gen_references(pw, ph), scene, rig, model, responses, eta, settings);
    let mask = lit_mask(rig, scene.depth());
    let lit = mask.iter().filter(|&&m| m).count();
    let mut rows = Vec::with_capacity(sigmas.len() * seeds.len());
    for &sigma in sigmas {
        for &seed in seeds {
            let b = add_noise(&binary, sigma, seed)?;
            let r = add_noise(&refs, sigma, seed.wrapping_add(REFERENCE_SEED_OFFSET))?;
            let refs = References { black: &r.frames[0], white: &r.frames[1] };
            let depth = reconstruct_depth(&b, Some(refs), rig, opts)?;
            let stats = depth_error(&depth, scene.depth(), Some(&mask))?;
            rows.push(SweepRow { sigma, seed, stats, decoded_fraction: stats.count as f64 / lit.max(1) as f64 });
        }
    }
    Ok(rows)
}

/// Lattice with whole-pixel spacing, so its nodes are camera pixels.
pub fn pixel_lattice(rig: &Rig, counts: [usize; 2]) -> dsl_core::Result<PixelLattice> {
    let s = |len: u32, n: usize| ((len.saturating_sub(1) as usize) / (n - 1).max(1)).max(1) as f64;
    PixelLattice::new([0.0, 0.0], [s(rig.camera.width, counts[0]), s(rig.camera.height, counts[1])], counts)
}

/// Flat target at depth `z` over the listed pixels only; other pixels have
/// undefined depth and stay dark.
fn sparse_target(rig: &Rig, pixels: &[[usize; 2]], z: f64, reflectance: f64, grid: WavelengthGrid) -> dsl_core::Result<Scene> {
    let (w, h) = (rig.camera.width as usize, rig.camera.height as usize);
    let base = scenes::flat_target(w, h, z, reflectance, grid)?;
    let mut depth = ScalarMap::filled(w, h, f64::NAN);
    for &[x, y] in pixels {
        depth.set(x, y, z);
    }
    Scene::new(depth, base.reflectance().clone())
}

/// The simulator's ground truth for a calibration session.
#[derive(Debug, Clone)]
pub struct CalibrationTruth<'a> {
    pub rig: &'a Rig,
    pub model: &'a CorrespondenceModel,
    pub responses: &'a ResponseSet,
    pub eta: &'a EfficiencySet,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub eta: EtaEstimate,
    /// Largest |estimated − true| first-order ratio over all measurements.
    pub eta_max_error: f64,
    pub extraction: Extraction,
    /// Mean and max |extracted − true| column.
    pub sample_error: (f64, f64),
    /// Surrogate fitted to the extracted samples.
    pub model: Option<CorrespondenceModel>,
    pub refinement: Refinement,
}

/// Camera pixels of an efficiency window: up to 16 × 16 around the center.
fn center_window(rig: &Rig) -> Vec<[usize; 2]> {
    let (w, h) = (rig.camera.width as usize, rig.camera.height as usize);
    let (nx, ny) = (w.min(16), h.min(16));
    let (x0, y0) = ((w - nx) / 2, (h - ny) / 2);
    (y0..y0 + ny).flat_map(|y| (x0..x0 + nx).map(move |x| [x, y])).collect()
}

/// Simulates and processes a full calibration session: block sweeps through
/// bandpass filters for efficiency, narrow scanline sweeps at every knot and
/// depth for correspondence samples, and patch observations for response
/// refinement starting from a perturbed guess.
pub fn simulate_calibration(
    truth: &CalibrationTruth<'_>,
    cfg: &ExperimentConfig,
    counts: [usize; 2],
) -> Result<CalibrationRun> {
    let c = &cfg.calibration;
    let rig = truth.rig;
    let grid = *truth.eta.grid();
    let (pw, ph) = (rig.projector.width, rig.projector.height);
    let capture = |scene: &Scene, set, center: f64, z: f64| -> Result<CalibrationCapture> {
        let settings = RenderSettings { gain: truth.gain, filter: Some(bandpass(grid, center, c.filter_width_nm)) };
        let stack = render_stack(&set, scene, rig, truth.model, truth.responses, truth.eta, &settings);
        Ok(CalibrationCapture::new(stack, center, c.filter_width_nm, z, c.target_reflectance)?)
    };

    let window = center_window(rig);
    let target = sparse_target(rig, &window, c.target_depth_mm, c.target_reflectance, grid)?;
    let blocks = gen_scanlines(pw, ph, cfg.patterns.block_width, cfg.patterns.block_shift)?;
    let eta_caps = filter_centers(&grid, c.filter_step_nm)
        .into_iter()
        .map(|l| capture(&target, blocks.clone(), l, c.target_depth_mm))
        .collect::<Result<Vec<_>>>()?;
    let eta = estimate_eta(&eta_caps, grid)?;
    let mut eta_max_error = 0.0f64;
    for m in &eta.measurements {
        let Some(j) = grid.index_of(m.wavelength_nm) else { continue };
        for (order, v) in [(Order::Minus, m.minus), (Order::Plus, m.plus)] {
            if let Some(v) = v {
                let want = truth.eta.eta(order, j) / truth.eta.eta(Order::Zero, j);
                eta_max_error = eta_max_error.max((v - want).abs());
            }
        }
    }

    let lattice = pixel_lattice(rig, counts)?;
    let nodes: Vec<[usize; 2]> = lattice.nodes().map(|p| [p[0] as usize, p[1] as usize]).collect();
    let lines = gen_scanlines(pw, ph, cfg.patterns.line_width, cfg.patterns.shift)?;
    let mut sample_caps = Vec::new();
    for &z in &cfg.model.depths_mm {
        let scene = sparse_target(rig, &nodes, z, c.target_reflectance, grid)?;
        for &l in &cfg.model.knots_nm {
            sample_caps.push(capture(&scene, lines.clone(), l, z)?);
        }
    }
    let extraction = extract_correspondence_samples(&sample_caps, &nodes, rig.grating.orders())?;
    let mut errs = Vec::with_capacity(extraction.samples.len());
    for s in &extraction.samples {
        if let Ok(q) = truth.model.query(s.pixel, s.depth_mm, s.order, s.wavelength_nm) {
            errs.push((s.column - q).abs());
        }
    }
    let sample_error = if errs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (errs.iter().sum::<f64>() / errs.len() as f64, errs.iter().cloned().fold(0.0, f64::max))
    };
    let model = CorrespondenceModel::fit(&extraction.samples, lattice, &cfg.model.knots_nm, pw).ok();

    let patches = scenes::colorchecker_spectra(grid);
    let drives = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]];
    let p = [rig.camera.width as f64 / 2.0, rig.camera.height as f64 / 2.0];
    let d = rig.propagation_distance(p, c.target_depth_mm)?;
    let obs = observe_patches(&patches, &drives, truth.responses, truth.eta, truth.gain, 1.0 / (d * d));
    let initial = perturbed(truth.responses)?;
    let refinement = refine_responses(&initial, &obs, &RefineOptions { weight: c.refine_weight, ..RefineOptions::default() })?;

    Ok(CalibrationRun { eta, eta_max_error, extraction, sample_error, model, refinement })
}

/// Deterministic ±10 % ripple on every response curve.
fn perturbed(r: &ResponseSet) -> dsl_core::Result<ResponseSet> {
    let g = *r.grid();
    let bump = |c: &SpectralCurve, k: f64| {
        SpectralCurve::new(g, c.values().iter().enumerate().map(|(j, v)| v * (1.0 + k * (j as f64 * 0.7).sin())).collect())
    };
    let cam = r.cam();
    let proj = r.proj();
    ResponseSet::new(
        [bump(&cam[0], 0.1)?, bump(&cam[1], -0.1)?, bump(&cam[2], 0.1)?],
        [bump(&proj[0], -0.1)?, bump(&proj[1], 0.1)?, bump(&proj[2], -0.1)?],
    )
}
