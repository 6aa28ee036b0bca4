//! Experiment configuration: a JSON file whose relative paths resolve
//! against the file's directory, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DslError, Result};
use crate::manifest::read_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternConfig {
    /// Scanline width and step for hyperspectral captures.
    pub line_width: u32,
    pub shift: u32,
    /// Capture inverse binary patterns too.
    pub complement: bool,
    /// Block sweep used to measure diffraction efficiency.
    pub block_width: u32,
    pub block_shift: u32,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self { line_width: 5, shift: 2, complement: false, block_width: 40, block_shift: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Stored `DSLC` model; when absent one is fitted from exact samples.
    pub path: Option<PathBuf>,
    /// Lattice nodes per axis; by default about one node per 15 pixels.
    pub lattice: Option<[usize; 2]>,
    pub knots_nm: Vec<f64>,
    pub depths_mm: Vec<f64>,
    /// Depth tabulation step in mm; `null` queries the power laws directly.
    pub table_step_mm: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            path: None,
            lattice: None,
            knots_nm: dsl_core::correspondence::DEFAULT_KNOTS_NM.to_vec(),
            depths_mm: dsl_core::correspondence::DEFAULT_DEPTHS_MM.to_vec(),
            table_step_mm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub filter_width_nm: f64,
    /// Spacing of the filters used for efficiency sweeps.
    pub filter_step_nm: f64,
    /// Depth of the flat target for efficiency sweeps.
    pub target_depth_mm: f64,
    pub target_reflectance: f64,
    pub refine_weight: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { filter_width_nm: 10.0, filter_step_nm: 10.0, target_depth_mm: 800.0, target_reflectance: 0.99, refine_weight: 0.005 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Relative,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `demo`, `prototype`, or a rig JSON path.
    pub rig: String,
    /// `colorchecker`, `boxcar`, `two-box`, `planar`, or a scene manifest path.
    pub scene: String,
    /// Depth of the built-in scenes.
    pub scene_depth_mm: f64,
    pub patterns: PatternConfig,
    pub model: ModelConfig,
    /// Camera and projector response CSVs; synthetic curves when absent.
    pub camera_response: Option<PathBuf>,
    pub projector_response: Option<PathBuf>,
    /// Diffraction efficiency CSV; synthetic curves when absent.
    pub efficiency: Option<PathBuf>,
    /// Render gain; by default a white frame reads 1 at the scene's median depth.
    pub gain: Option<f64>,
    /// Noise level of simulated captures.
    pub noise_sigma: f64,
    /// Noise levels of the sweep.
    pub sweep_sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub kappa_lambda: f64,
    pub kappa_sigma: f64,
    pub kappa_interior: f64,
    pub threshold: ThresholdMode,
    pub tau: f64,
    /// Active first orders used by the reconstruction.
    pub orders: Vec<i32>,
    pub depth_range_mm: [f64; 2],
    /// Input directory for reconstruction and evaluation; defaults to `out`.
    pub captures: Option<PathBuf>,
    pub calibration: CalibrationConfig,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rig: "demo".into(),
            scene: "colorchecker".into(),
            scene_depth_mm: 800.0,
            patterns: PatternConfig::default(),
            model: ModelConfig::default(),
            camera_response: None,
            projector_response: None,
            efficiency: None,
            gain: None,
            noise_sigma: 0.01,
            sweep_sigmas: vec![0.0, 0.005, 0.01, 0.02, 0.03, 0.04],
            seeds: vec![0],
            kappa_lambda: 0.005,
            kappa_sigma: 5.0,
            kappa_interior: 0.9,
            threshold: ThresholdMode::Relative,
            tau: 0.5,
            orders: vec![-1, 1],
            depth_range_mm: [100.0, 5000.0],
            captures: None,
            calibration: CalibrationConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

pub const BUILTIN_RIGS: [&str; 2] = ["demo", "prototype"];
pub const BUILTIN_SCENES: [&str; 4] = ["colorchecker", "boxcar", "two-box", "planar"];

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sigma: Option<Vec<f64>>,
    pub kappa_lambda: Option<f64>,
    pub tau: Option<f64>,
    pub orders: Option<Vec<i32>>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path, "experiment configuration")?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Rebases every relative path onto `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in [&mut self.rig, &mut self.scene] {
            if !BUILTIN_RIGS.contains(&s.as_str()) && !BUILTIN_SCENES.contains(&s.as_str()) && Path::new(s.as_str()).is_relative() {
                *s = base.join(s.as_str()).to_string_lossy().into_owned();
            }
        }
        for p in [&mut self.model.path, &mut self.camera_response, &mut self.projector_response, &mut self.efficiency, &mut self.captures]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.out);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(s) = &o.sigma {
            self.sweep_sigmas = s.clone();
            if let Some(&first) = s.first() {
                self.noise_sigma = first;
            }
        }
        if let Some(k) = o.kappa_lambda {
            self.kappa_lambda = k;
        }
        if let Some(t) = o.tau {
            self.tau = t;
        }
        if let Some(m) = &o.orders {
            self.orders = m.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DslError::Config(m));
        if self.sweep_sigmas.iter().chain([&self.noise_sigma]).any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("noise sigma must be finite and non-negative".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.kappa_lambda >= 0.0) || !(self.kappa_sigma > 0.0) || !(0.0..=1.0).contains(&self.kappa_interior) {
            return bad("kappa_lambda must be >= 0, kappa_sigma > 0, kappa_interior in [0, 1]".into());
        }
        if !self.tau.is_finite() || (self.threshold == ThresholdMode::Relative && !(0.0..=1.0).contains(&self.tau)) {
            return bad(format!("tau {} is out of range", self.tau));
        }
        if let Err(e) = crate::manifest::parse_orders(&self.orders) {
            return bad(e);
        }
        let [lo, hi] = self.depth_range_mm;
        if !(lo > 0.0 && hi > lo) {
            return bad("depth_range_mm must be positive and ascending".into());
        }
        if !(self.scene_depth_mm > 0.0) {
            return bad("scene_depth_mm must be positive".into());
        }
        if self.gain.is_some_and(|g| !(g > 0.0)) {
            return bad("gain must be positive".into());
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    /// Directory holding inputs produced by earlier subcommands.
    pub fn input_dir(&self) -> &Path {
        self.captures.as_deref().unwrap_or(&self.out)
    }
}
