//! The `dsl` command-line tool.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dsl_core::correspondence::CorrespondenceModel;
use dsl_core::metrics::{cube_error, depth_error};
use dsl_core::reconstruction::{reconstruct_depth, reconstruct_hyperspectral, DepthMap, PixelStatus, References};
use dsl_core::scenes;
use dsl_core::sim::RenderSettings;
use dsl_core::spectra::fwhm;
use dsl_core::{EfficiencySet, ResponseSet, Rig, SpectralCurve, WavelengthGrid};
use serde::Serialize;

use crate::config::{ExperimentConfig, Overrides, BUILTIN_SCENES};
use crate::error::{read_input, write_output, DslError, Result};
use crate::experiments::{self, CalibrationTruth, Setup};
use crate::formats::{self, num};
use crate::manifest::{self, write_json, Metrics, RigFile, SceneManifest};

#[derive(Debug, Parser)]
#[command(name = "dsl", version, about = "Dispersed structured light: simulation, calibration and hyperspectral 3D reconstruction")]
pub struct Cli {
    /// Experiment configuration JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for noise and random scenes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Noise levels, comma separated; the first is used by `simulate`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// Spectral smoothness weight.
    #[arg(long, global = true)]
    pub kappa_lambda: Option<f64>,
    /// Binary decoding threshold.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Active first orders, comma separated (e.g. -1,1).
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub orders: Option<Vec<i32>>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Render binary, reference and scanline captures of the scene.
    Simulate,
    /// Fit the correspondence surrogate to exact grating samples.
    FitCorrespondence,
    /// Run a simulated calibration session.
    Calibrate,
    /// Decode binary captures into a depth map.
    ReconstructDepth,
    /// Recover a reflectance cube from scanline captures and depth.
    ReconstructHyper,
    /// Compare reconstructions with the scene's ground truth.
    Evaluate,
    /// Depth error of binary decoding over a range of noise levels.
    NoiseSweep,
    /// Write the demo rigs, scenes, curves and a configuration.
    ExportDemo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::FitCorrespondence => "fit-correspondence",
            Command::Calibrate => "calibrate",
            Command::ReconstructDepth => "reconstruct-depth",
            Command::ReconstructHyper => "reconstruct-hyper",
            Command::Evaluate => "evaluate",
            Command::NoiseSweep => "noise-sweep",
            Command::ExportDemo => "export-demo",
        }
    }
}

pub const CAPTURE_DIR: &str = "captures";
pub const MODEL_FILE: &str = "model.dslc";
pub const DEPTH_FILE: &str = "depth.pfm";
pub const CUBE_FILE: &str = "cube.dslh";

pub fn metrics_path(out: &Path, command: Command) -> PathBuf {
    out.join(format!("{}.metrics.json", command.name()))
}

/// Runs `f` on a pool capped at `DSL_THREADS` workers when that is set.
pub fn with_threads<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var("DSL_THREADS") {
        Err(_) => Ok(f()),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| DslError::Config(format!("DSL_THREADS must be a positive integer, got {v:?}")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| DslError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        sigma: cli.sigma.clone(),
        kappa_lambda: cli.kappa_lambda,
        tau: cli.tau,
        orders: cli.orders.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match with_threads(|| run(&cli)).and_then(|r| r) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let metrics = match cli.command {
        Command::Simulate => simulate(&cfg)?,
        Command::FitCorrespondence => fit_correspondence(&cfg)?,
        Command::Calibrate => calibrate(&cfg)?,
        Command::ReconstructDepth => reconstruct_depth_cmd(&cfg)?,
        Command::ReconstructHyper => reconstruct_hyper_cmd(&cfg)?,
        Command::Evaluate => evaluate(&cfg)?,
        Command::NoiseSweep => noise_sweep(&cfg)?,
        Command::ExportDemo => export_demo(&cfg)?,
    };
    let path = metrics_path(&cfg.out, cli.command);
    write_json(&path, &metrics)?;
    println!("{}: wrote {}", cli.command.name(), path.display());
    Ok(())
}

fn rel(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

#[derive(Serialize)]
struct SimulateManifest {
    rig: String,
    scene: String,
    model: String,
    stacks: Vec<String>,
    frame_count: usize,
    noise_sigma: f64,
    seed: u64,
}

fn simulate(cfg: &ExperimentConfig) -> Result<Metrics> {
    let setup = Setup::from_config(cfg)?;
    let caps = experiments::simulate_captures(&setup, &cfg.patterns, cfg.noise_sigma, cfg.seed())?;
    let dir = rel(cfg, CAPTURE_DIR);
    let mut stacks = Vec::new();
    for (name, st) in [("binary", &caps.binary), ("references", &caps.references), ("scanlines", &caps.scan)] {
        manifest::save_stack(&dir, name, st)?;
        stacks.push(format!("{CAPTURE_DIR}/{name}.json"));
    }
    write_output(&rel(cfg, MODEL_FILE), &formats::encode_model(&setup.model))?;
    write_json(&rel(cfg, "rig.json"), &RigFile::from_rig(&setup.rig))?;
    manifest::save_scene(&cfg.out, "ground_truth", &setup.scene)?;
    write_json(
        &rel(cfg, "simulate.json"),
        &SimulateManifest {
            rig: "rig.json".into(),
            scene: "ground_truth.json".into(),
            model: MODEL_FILE.into(),
            stacks,
            frame_count: caps.frame_count(),
            noise_sigma: cfg.noise_sigma,
            seed: cfg.seed(),
        },
    )?;
    let mut m = Metrics::new("simulate");
    m.set("binary_frames", caps.binary.len())
        .set("reference_frames", caps.references.len())
        .set("scanline_frames", caps.scan.len())
        .set("frame_count", caps.frame_count())
        .set("valid_pixels", caps.binary.valid.iter().filter(|&&v| v).count())
        .set("gain", setup.settings.gain)
        .set("noise_sigma", cfg.noise_sigma)
        .set("seed", cfg.seed());
    Ok(m)
}

fn fit_correspondence(cfg: &ExperimentConfig) -> Result<Metrics> {
    let rig = experiments::load_rig(cfg)?;
    let counts = cfg.model.lattice.unwrap_or_else(|| experiments::default_lattice(&rig));
    let (model, samples) = experiments::fit_model(&rig, counts, &cfg.model.knots_nm, &cfg.model.depths_mm, cfg.model.table_step_mm)?;
    write_output(&rel(cfg, MODEL_FILE), &formats::encode_model(&model))?;
    write_output(&rel(cfg, "samples.csv"), &formats::encode_samples(&samples))?;
    let (mean_rms, max_rms, fitted) = model.residual_stats();
    let mut m = Metrics::new("fit-correspondence");
    m.set("lattice", counts)
        .set("samples", samples.len())
        .set("fitted_groups", fitted)
        .set("groups", model.fits().len())
        .set("mean_fit_rms_px", mean_rms)
        .set("max_fit_rms_px", max_rms);
    Ok(m)
}

#[derive(Serialize)]
struct EtaRow {
    wavelength_nm: f64,
    minus: Option<f64>,
    plus: Option<f64>,
    pixels: usize,
}

#[derive(Serialize)]
struct CalibrationReport {
    efficiency: Vec<EtaRow>,
    uncalibrated_orders: Vec<i32>,
    efficiency_csv: String,
    camera_response_csv: String,
    projector_response_csv: String,
    samples_csv: String,
    model: Option<String>,
    sample_count: usize,
    skipped_pixels: usize,
    partial_pixels: usize,
    efficiency_max_error: f64,
    sample_mean_error_px: f64,
    sample_max_error_px: f64,
    refine_initial_loss: f64,
    refine_loss: f64,
    refine_iterations: usize,
}

fn calibrate(cfg: &ExperimentConfig) -> Result<Metrics> {
    let rig = experiments::load_rig(cfg)?;
    let (_, responses, eta) = spectral_inputs(cfg)?;
    let model = experiments::load_model(cfg, &rig)?;
    let gain = match cfg.gain {
        Some(g) => g,
        None => RenderSettings::normalized(&rig, &responses, &eta, cfg.calibration.target_depth_mm)?.gain,
    };
    let counts = cfg.model.lattice.unwrap_or_else(|| experiments::default_lattice(&rig));
    let truth = CalibrationTruth { rig: &rig, model: &model, responses: &responses, eta: &eta, gain };
    let run = experiments::simulate_calibration(&truth, cfg, counts)?;

    write_output(&rel(cfg, "efficiency.csv"), &formats::encode_efficiency(&run.eta.eta))?;
    let (cam, proj) = formats::encode_responses(&run.refinement.responses);
    write_output(&rel(cfg, "camera_response.csv"), &cam)?;
    write_output(&rel(cfg, "projector_response.csv"), &proj)?;
    write_output(&rel(cfg, "calibration_samples.csv"), &formats::encode_samples(&run.extraction.samples))?;
    let model_file = match &run.model {
        Some(m) => {
            write_output(&rel(cfg, "calibrated_model.dslc"), &formats::encode_model(m))?;
            Some("calibrated_model.dslc".to_string())
        }
        None => None,
    };
    let report = CalibrationReport {
        efficiency: run
            .eta
            .measurements
            .iter()
            .map(|m| EtaRow { wavelength_nm: m.wavelength_nm, minus: m.minus, plus: m.plus, pixels: m.pixels })
            .collect(),
        uncalibrated_orders: run.eta.uncalibrated.first_orders().map(|o| o.value()).collect(),
        efficiency_csv: "efficiency.csv".into(),
        camera_response_csv: "camera_response.csv".into(),
        projector_response_csv: "projector_response.csv".into(),
        samples_csv: "calibration_samples.csv".into(),
        model: model_file,
        sample_count: run.extraction.samples.len(),
        skipped_pixels: run.extraction.skipped.len(),
        partial_pixels: run.extraction.partial,
        efficiency_max_error: run.eta_max_error,
        sample_mean_error_px: run.sample_error.0,
        sample_max_error_px: run.sample_error.1,
        refine_initial_loss: run.refinement.initial_loss,
        refine_loss: run.refinement.loss,
        refine_iterations: run.refinement.iterations,
    };
    write_json(&rel(cfg, "calibration_report.json"), &report)?;
    let mut m = Metrics::new("calibrate");
    m.set("sample_count", report.sample_count)
        .set("efficiency_max_error", report.efficiency_max_error)
        .set("sample_mean_error_px", report.sample_mean_error_px)
        .set("sample_max_error_px", report.sample_max_error_px)
        .set("refine_loss_ratio", run.refinement.loss / run.refinement.initial_loss.max(f64::MIN_POSITIVE));
    Ok(m)
}

/// Wavelength grid (from a scene manifest, else the standard grid) and the
/// configured response and efficiency curves.
fn spectral_inputs(cfg: &ExperimentConfig) -> Result<(WavelengthGrid, ResponseSet, EfficiencySet)> {
    let grid = if BUILTIN_SCENES.contains(&cfg.scene.as_str()) {
        WavelengthGrid::standard()
    } else {
        let p = Path::new(&cfg.scene);
        let m: SceneManifest = manifest::read_json(p, "scene manifest")?;
        m.grid.to_grid().map_err(|e| DslError::Config(format!("{}: grid: {e}", p.display())))?
    };
    Ok((grid, experiments::load_responses(cfg, grid)?, experiments::load_efficiency(cfg, grid)?))
}

fn load_stack(cfg: &ExperimentConfig, name: &str) -> Result<dsl_core::sim::CaptureStack> {
    let p = cfg.input_dir().join(CAPTURE_DIR).join(format!("{name}.json"));
    if !p.exists() {
        return Err(DslError::Dependency { path: p, hint: "run `dsl simulate` first".into() });
    }
    manifest::load_stack(&p)
}

fn reconstruct_depth_cmd(cfg: &ExperimentConfig) -> Result<Metrics> {
    let rig = experiments::load_rig(cfg)?;
    let binary = load_stack(cfg, "binary")?;
    let refs = load_stack(cfg, "references")?;
    if refs.frames.len() != 2 {
        return Err(DslError::Config("reference stack must hold a black and a white frame".into()));
    }
    let depth = reconstruct_depth(
        &binary,
        Some(References { black: &refs.frames[0], white: &refs.frames[1] }),
        &rig,
        &experiments::depth_options(cfg),
    )?;
    write_output(&rel(cfg, DEPTH_FILE), &formats::encode_pfm_gray(&depth.to_map()))?;
    let mut m = Metrics::new("reconstruct-depth");
    m.set("valid_pixels", depth.valid_count()).set("pixels", depth.depth.len());
    Ok(m)
}

fn load_depth(cfg: &ExperimentConfig) -> Result<DepthMap> {
    let p = cfg.input_dir().join(DEPTH_FILE);
    let bytes = read_input(&p, "run `dsl reconstruct-depth` first")?;
    Ok(DepthMap::from_map(&formats::decode_pfm_gray(&bytes).map_err(|e| e.at(&p))?))
}

fn reconstruction_model(cfg: &ExperimentConfig) -> Result<CorrespondenceModel> {
    let p = match &cfg.model.path {
        Some(p) => p.clone(),
        None => cfg.input_dir().join(MODEL_FILE),
    };
    let bytes = read_input(&p, "run `dsl simulate` or `dsl fit-correspondence` first")?;
    formats::decode_model(&bytes).map_err(|e| e.at(&p))
}

fn reconstruct_hyper_cmd(cfg: &ExperimentConfig) -> Result<Metrics> {
    let rig = experiments::load_rig(cfg)?;
    let depth = load_depth(cfg)?;
    let scan = load_stack(cfg, "scanlines")?;
    let model = reconstruction_model(cfg)?;
    let (_, responses, eta) = spectral_inputs(cfg)?;
    let settings = RenderSettings { gain: cfg.gain.unwrap_or(scan.meta.gain), filter: None };
    let opts = experiments::hyper_options(cfg)?;
    let hyper = reconstruct_hyperspectral(&depth, &scan, &rig, &model, &responses, &eta, &settings, &opts)?;
    write_output(&rel(cfg, CUBE_FILE), &formats::encode_cube(&hyper.cube))?;

    let rows = hyper.diagnostics.iter().enumerate().map(|(i, d)| {
        vec![
            (i % hyper.cube.width()).to_string(),
            (i / hyper.cube.width()).to_string(),
            status_name(d.status).to_string(),
            num(d.residual),
            d.used.first_orders().map(|o| o.value().to_string()).collect::<Vec<_>>().join(" "),
            d.iterations.to_string(),
            num(d.kappa_first),
        ]
    });
    write_output(
        &rel(cfg, "diagnostics.csv"),
        &formats::encode_table(&["x", "y", "status", "residual", "orders", "iterations", "kappa_first"], rows),
    )?;
    if let Ok(scene) = experiments::load_scene(cfg, &rig) {
        let names: Vec<String> = scene.probes.iter().map(|p| p.name.clone()).collect();
        let curves: Vec<SpectralCurve> = scene.probes.iter().map(|p| hyper.cube.curve(p.x, p.y)).collect();
        if !curves.is_empty() {
            write_output(&rel(cfg, "probes.csv"), &formats::encode_spectra(&names, &curves))?;
        }
    }
    let count = |s: PixelStatus| hyper.diagnostics.iter().filter(|d| d.status == s).count();
    let mut m = Metrics::new("reconstruct-hyper");
    m.set("solved", count(PixelStatus::Solved))
        .set("not_converged", count(PixelStatus::NotConverged))
        .set("no_depth", count(PixelStatus::NoDepth))
        .set("unsolvable", count(PixelStatus::Unsolvable))
        .set("kappa_lambda", cfg.kappa_lambda);
    Ok(m)
}

fn status_name(s: PixelStatus) -> &'static str {
    match s {
        PixelStatus::Solved => "solved",
        PixelStatus::NotConverged => "not_converged",
        PixelStatus::NoDepth => "no_depth",
        PixelStatus::Unsolvable => "unsolvable",
    }
}

fn evaluate(cfg: &ExperimentConfig) -> Result<Metrics> {
    let rig = experiments::load_rig(cfg)?;
    let scene = experiments::load_scene(cfg, &rig)?;
    let depth = load_depth(cfg)?;
    let cp = cfg.input_dir().join(CUBE_FILE);
    let cube = formats::decode_cube(&read_input(&cp, "run `dsl reconstruct-hyper` first")?, Some(*scene.grid())).map_err(|e| e.at(&cp))?;
    let de = depth_error(&depth, scene.depth(), None)?;
    let ce = cube_error(&cube, scene.reflectance(), Some(&depth.valid), 0.02)?;

    let mut names = Vec::new();
    let mut curves = Vec::new();
    let mut fwhm_rows = Vec::new();
    for p in &scene.probes {
        let est = cube.curve(p.x, p.y);
        let gt = scene.reflectance().curve(p.x, p.y);
        let width = |c: &SpectralCurve| fwhm(c).map_or(String::new(), num);
        fwhm_rows.push(vec![p.name.clone(), width(&est), width(&gt)]);
        names.push(format!("{}_est", p.name));
        names.push(format!("{}_gt", p.name));
        curves.push(est);
        curves.push(gt);
    }
    if !curves.is_empty() {
        write_output(&rel(cfg, "probe_spectra.csv"), &formats::encode_spectra(&names, &curves))?;
        write_output(&rel(cfg, "fwhm.csv"), &formats::encode_table(&["probe", "fwhm_est_nm", "fwhm_gt_nm"], fwhm_rows))?;
    }
    let mut m = Metrics::new("evaluate");
    m.set("depth_mean_abs_mm", de.mean_abs)
        .set("depth_median_abs_mm", de.median_abs)
        .set("depth_rmse_mm", de.rmse)
        .set("depth_pixels", de.count)
        .set("spectral_rmse", ce.mean_rmse)
        .set("spectral_relative_rmse", ce.mean_relative_rmse)
        .set("spectral_within_2pct", ce.fraction_within)
        .set("spectral_angle_rad", ce.mean_angle)
        .set("spectral_pixels", ce.count);
    Ok(m)
}

fn noise_sweep(cfg: &ExperimentConfig) -> Result<Metrics> {
    let setup = Setup::from_config(cfg)?;
    let rows = experiments::noise_sweep(&setup, cfg.patterns.complement, &cfg.sweep_sigmas, &cfg.seeds, &experiments::depth_options(cfg))?;
    let table = rows.iter().map(|r| {
        vec![
            num(r.sigma),
            r.seed.to_string(),
            num(r.stats.mean_abs),
            num(r.stats.median_abs),
            num(r.stats.rmse),
            r.stats.count.to_string(),
            num(r.decoded_fraction),
        ]
    });
    write_output(
        &rel(cfg, "noise_sweep.csv"),
        &formats::encode_table(&["sigma", "seed", "mean_abs_mm", "median_abs_mm", "rmse_mm", "pixels", "decoded_fraction"], table),
    )?;
    let per_sigma: Vec<(f64, f64)> = cfg
        .sweep_sigmas
        .iter()
        .map(|&s| {
            let v: Vec<f64> = rows.iter().filter(|r| r.sigma == s).map(|r| r.stats.mean_abs).collect();
            (s, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let mut m = Metrics::new("noise-sweep");
    m.set("sigma", per_sigma.iter().map(|r| r.0).collect::<Vec<_>>())
        .set("mean_abs_mm", per_sigma.iter().map(|r| r.1).collect::<Vec<_>>())
        .set("seeds", &cfg.seeds);
    Ok(m)
}

fn export_demo(cfg: &ExperimentConfig) -> Result<Metrics> {
    let out = &cfg.out;
    let grid = WavelengthGrid::standard();
    for (name, rig) in [("demo_rig", Rig::demo()), ("prototype_rig", Rig::prototype())] {
        write_json(&out.join(format!("{name}.json")), &RigFile::from_rig(&rig))?;
    }
    let rig = Rig::demo();
    let (w, h) = (rig.camera.width as usize, rig.camera.height as usize);
    let z = cfg.scene_depth_mm;
    let cc = scenes::colorchecker_scene(w, h, z, grid)?;
    let cc_names: Vec<String> = scenes::PATCH_NAMES.iter().map(|s| s.to_string()).collect();
    manifest::save_patch_scene(out, "colorchecker", &cc, (6, 4), &cc_names, &scenes::colorchecker_spectra(grid))?;
    let bx = scenes::boxcar_scene(w, h, z, grid)?;
    let bx_spectra: Vec<SpectralCurve> = scenes::BOXCAR_CENTERS.iter().map(|&c| scenes::boxcar(grid, c, 0.9)).collect();
    let bx_names: Vec<String> = bx.probes.iter().map(|p| p.name.clone()).collect();
    manifest::save_patch_scene(out, "boxcar", &bx, (3, 3), &bx_names, &bx_spectra)?;
    let tb = experiments::builtin_scene("two-box", &rig, z, grid, cfg.seed())?;
    manifest::save_scene(out, "two_box", &tb)?;

    let r = ResponseSet::synthetic(grid);
    let (cam, proj) = formats::encode_responses(&r);
    write_output(&out.join("camera_response.csv"), &cam)?;
    write_output(&out.join("projector_response.csv"), &proj)?;
    write_output(&out.join("efficiency.csv"), &formats::encode_efficiency(&EfficiencySet::synthetic(grid)))?;
    let demo_cfg = ExperimentConfig {
        rig: "demo_rig.json".into(),
        scene: "colorchecker.json".into(),
        camera_response: Some("camera_response.csv".into()),
        projector_response: Some("projector_response.csv".into()),
        efficiency: Some("efficiency.csv".into()),
        out: "run".into(),
        ..ExperimentConfig::default()
    };
    write_json(&out.join("config.json"), &demo_cfg)?;
    let mut m = Metrics::new("export-demo");
    m.set(
        "files",
        [
            "demo_rig.json",
            "prototype_rig.json",
            "colorchecker.json",
            "boxcar.json",
            "two_box.json",
            "camera_response.csv",
            "projector_response.csv",
            "efficiency.csv",
            "config.json",
        ],
    );
    Ok(m)
}
