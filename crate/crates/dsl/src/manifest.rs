//! JSON manifests for rigs, scenes and capture stacks, plus the metrics
//! document every subcommand writes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dsl_core::image::ScalarMap;
use dsl_core::patterns::{PatternSetKind, ScanlineSpec};
use dsl_core::scenes;
use dsl_core::sim::{CaptureMeta, CaptureStack, Probe, Scene};
use dsl_core::optics::RadialDistortion;
use dsl_core::{Cube, GratingModel, OrderSet, PinholeModel, Rig, WavelengthGrid};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{read_input, write_output, DslError, Result};
use crate::formats;

/// Version of the metrics JSON layout.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, hint: &str) -> Result<T> {
    let bytes = read_input(path, hint)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| DslError::parse(path, e.valid_up_to(), "file is not UTF-8"))?;
    serde_json::from_str(text).map_err(|e| DslError::parse(path, crate::error::json_offset(text, &e), e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_output(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-device rotation, row-major.
    pub rotation: [f64; 9],
    /// World-to-device translation in mm.
    pub translation: [f64; 3],
    pub resolution: [u32; 2],
    /// Radial coefficients (k1, k2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion: Option<[f64; 2]>,
}

impl DeviceFile {
    fn from_model(m: &PinholeModel) -> Self {
        let r = m.rotation();
        let t = m.translation();
        Self {
            fx: m.fx,
            fy: m.fy,
            cx: m.cx,
            cy: m.cy,
            rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            translation: [t[0], t[1], t[2]],
            resolution: [m.width, m.height],
            distortion: m.distortion.map(|d| [d.k1, d.k2]),
        }
    }

    fn to_model(&self) -> dsl_core::Result<PinholeModel> {
        let m = PinholeModel::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from_row_slice(&self.translation),
            self.resolution[0],
            self.resolution[1],
        )?;
        Ok(match self.distortion {
            Some([k1, k2]) => m.with_distortion(RadialDistortion { k1, k2 }),
            None => m,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GratingFile {
    pub groove_density_lines_per_mm: f64,
    pub offset_mm: f64,
    #[serde(default)]
    pub angle_deg: f64,
    /// Active first orders, any of -1 and 1.
    pub orders: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub camera: DeviceFile,
    pub projector: DeviceFile,
    pub grating: GratingFile,
}

pub fn parse_orders(list: &[i32]) -> std::result::Result<OrderSet, String> {
    let mut set = OrderSet::NONE;
    for &m in list {
        match m {
            -1 => set.minus = true,
            1 => set.plus = true,
            0 => {}
            _ => return Err(format!("order {m} is not one of -1, 0, 1")),
        }
    }
    Ok(set)
}

fn order_list(set: OrderSet) -> Vec<i32> {
    set.first_orders().map(|o| o.value()).collect()
}

impl RigFile {
    pub fn from_rig(rig: &Rig) -> Self {
        let g = &rig.grating;
        Self {
            camera: DeviceFile::from_model(&rig.camera),
            projector: DeviceFile::from_model(&rig.projector),
            grating: GratingFile {
                groove_density_lines_per_mm: g.groove_density() * 1e6,
                offset_mm: g.offset_mm(),
                angle_deg: g.angle_rad().to_degrees(),
                orders: order_list(g.orders()),
            },
        }
    }

    pub fn to_rig(&self) -> std::result::Result<Rig, String> {
        let camera = self.camera.to_model().map_err(|e| format!("camera: {e}"))?;
        let projector = self.projector.to_model().map_err(|e| format!("projector: {e}"))?;
        let g = &self.grating;
        let orders = parse_orders(&g.orders)?;
        // lines/mm → lines/nm
        let grating = GratingModel::new(g.groove_density_lines_per_mm * 1e-6, g.offset_mm, g.angle_deg.to_radians(), orders)
            .map_err(|e| format!("grating: {e}"))?;
        Rig::new(camera, projector, grating).map_err(|e| e.to_string())
    }
}

pub fn load_rig(path: &Path) -> Result<Rig> {
    let f: RigFile = read_json(path, "rig description")?;
    f.to_rig().map_err(|e| DslError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub start_nm: f64,
    pub step_nm: f64,
    pub count: usize,
}

impl GridFile {
    pub fn from_grid(g: &WavelengthGrid) -> Self {
        Self { start_nm: g.start_nm(), step_nm: g.step_nm(), count: g.len() }
    }

    pub fn to_grid(self) -> std::result::Result<WavelengthGrid, String> {
        WavelengthGrid::with_count(self.start_nm, self.step_nm, self.count).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFile {
    pub name: String,
    pub x: usize,
    pub y: usize,
}

/// Patches laid out on a `cols × rows` tiling, spectra in one CSV whose
/// columns are listed row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchLayout {
    pub spectra: String,
    pub cols: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cube: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patches: Option<PatchLayout>,
    pub grid: GridFile,
    #[serde(default)]
    pub probes: Vec<ProbeFile>,
}

/// Writes `scene` as `<dir>/<name>.json` with a depth PFM and a `DSLH` cube.
pub fn save_scene(dir: &Path, name: &str, scene: &Scene) -> Result<PathBuf> {
    let depth = format!("{name}_depth.pfm");
    let cube = format!("{name}_cube.dslh");
    write_output(&dir.join(&depth), &formats::encode_pfm_gray(scene.depth()))?;
    write_output(&dir.join(&cube), &formats::encode_cube(scene.reflectance()))?;
    let m = SceneManifest {
        depth,
        cube: Some(cube),
        patches: None,
        grid: GridFile::from_grid(scene.grid()),
        probes: scene.probes.iter().map(|p| ProbeFile { name: p.name.clone(), x: p.x, y: p.y }).collect(),
    };
    let path = dir.join(format!("{name}.json"));
    write_json(&path, &m)?;
    Ok(path)
}

/// Writes a tiled patch scene: depth PFM, patch spectra CSV and manifest.
pub fn save_patch_scene(dir: &Path, name: &str, scene: &Scene, layout: (usize, usize), names: &[String], spectra: &[dsl_core::SpectralCurve]) -> Result<PathBuf> {
    let depth = format!("{name}_depth.pfm");
    let csv = format!("{name}_patches.csv");
    write_output(&dir.join(&depth), &formats::encode_pfm_gray(scene.depth()))?;
    write_output(&dir.join(&csv), &formats::encode_spectra(names, spectra))?;
    let m = SceneManifest {
        depth,
        cube: None,
        patches: Some(PatchLayout { spectra: csv, cols: layout.0, rows: layout.1 }),
        grid: GridFile::from_grid(scene.grid()),
        probes: scene.probes.iter().map(|p| ProbeFile { name: p.name.clone(), x: p.x, y: p.y }).collect(),
    };
    let path = dir.join(format!("{name}.json"));
    write_json(&path, &m)?;
    Ok(path)
}

fn sibling(manifest: &Path, rel: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(rel)
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let m: SceneManifest = read_json(path, "scene manifest")?;
    let grid = m.grid.to_grid().map_err(|e| DslError::Config(format!("{}: grid: {e}", path.display())))?;
    let dpath = sibling(path, &m.depth);
    let depth = formats::decode_pfm_gray(&read_input(&dpath, "scene depth map")?).map_err(|e| e.at(&dpath))?;
    let cube = match (&m.cube, &m.patches) {
        (Some(c), None) => {
            let cpath = sibling(path, c);
            formats::decode_cube(&read_input(&cpath, "scene reflectance cube")?, Some(grid)).map_err(|e| e.at(&cpath))?
        }
        (None, Some(p)) => {
            let spath = sibling(path, &p.spectra);
            let (_, curves) = formats::decode_spectra(&read_input(&spath, "patch spectra")?).map_err(|e| e.at(&spath))?;
            if curves.len() != p.cols * p.rows {
                return Err(DslError::Config(format!("{}: {} patches for a {}x{} layout", path.display(), curves.len(), p.cols, p.rows)));
            }
            let curves = curves
                .iter()
                .map(|c| dsl_core::spectra::resample(c, &grid))
                .collect::<dsl_core::Result<Vec<_>>>()?;
            let (w, h) = (depth.width(), depth.height());
            let tiles = scenes::tile_index(w, h, p.cols, p.rows);
            let mut data = Vec::with_capacity(w * h * grid.len());
            for t in tiles {
                data.extend_from_slice(curves[t].values());
            }
            Cube::from_data(w, h, grid, data)?
        }
        _ => return Err(DslError::Config(format!("{}: exactly one of \"cube\" and \"patches\" is required", path.display()))),
    };
    let probes = m.probes.into_iter().map(|p| Probe { name: p.name, x: p.x, y: p.y }).collect();
    Ok(Scene::new(depth, cube)?.with_probes(probes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KindFile {
    Binary { column_bits: u32, row_bits: u32, complement: bool },
    Scanline { projector_width: u32, line_width: u32, shift: u32 },
    Reference,
}

impl KindFile {
    pub fn from_kind(k: &PatternSetKind) -> Self {
        match *k {
            PatternSetKind::Binary { column_bits, row_bits, complement } => KindFile::Binary { column_bits, row_bits, complement },
            PatternSetKind::Scanline(s) => KindFile::Scanline { projector_width: s.projector_width, line_width: s.line_width, shift: s.shift },
            PatternSetKind::Reference => KindFile::Reference,
        }
    }

    pub fn to_kind(self) -> dsl_core::Result<PatternSetKind> {
        Ok(match self {
            KindFile::Binary { column_bits, row_bits, complement } => PatternSetKind::Binary { column_bits, row_bits, complement },
            KindFile::Scanline { projector_width, line_width, shift } => {
                PatternSetKind::Scanline(ScanlineSpec::new(projector_width, line_width, shift)?)
            }
            KindFile::Reference => PatternSetKind::Reference,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaFile {
    pub noise_sigma: f64,
    pub seed: Option<u64>,
    pub exposure: f64,
    pub intensity: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    pub kind: KindFile,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<String>,
    /// Single-channel PFM, 1 where the pixel's optics were computable.
    pub valid: String,
    pub meta: MetaFile,
}

/// Writes each frame as `<name>_NNNN.pfm` next to `<name>.json`.
pub fn save_stack(dir: &Path, name: &str, stack: &CaptureStack) -> Result<PathBuf> {
    let mut frames = Vec::with_capacity(stack.len());
    for (i, f) in stack.frames.iter().enumerate() {
        let file = format!("{name}_{i:04}.pfm");
        write_output(&dir.join(&file), &formats::encode_pfm(f))?;
        frames.push(file);
    }
    let valid = format!("{name}_valid.pfm");
    let mask = ScalarMap::from_data(stack.width, stack.height, stack.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect())?;
    write_output(&dir.join(&valid), &formats::encode_pfm_gray(&mask))?;
    let m = &stack.meta;
    let manifest = StackManifest {
        kind: KindFile::from_kind(&stack.kind),
        width: stack.width,
        height: stack.height,
        frames,
        valid,
        meta: MetaFile { noise_sigma: m.noise_sigma, seed: m.seed, exposure: m.exposure, intensity: m.intensity, gain: m.gain },
    };
    let path = dir.join(format!("{name}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn load_stack(path: &Path) -> Result<CaptureStack> {
    let m: StackManifest = read_json(path, "capture stack manifest")?;
    let mut frames = Vec::with_capacity(m.frames.len());
    for f in &m.frames {
        let p = sibling(path, f);
        let im = formats::decode_pfm(&read_input(&p, "capture frame")?).map_err(|e| e.at(&p))?;
        if im.width() != m.width || im.height() != m.height {
            return Err(DslError::Config(format!("{}: frame is {}x{}, manifest says {}x{}", p.display(), im.width(), im.height(), m.width, m.height)));
        }
        frames.push(im);
    }
    let vp = sibling(path, &m.valid);
    let mask = formats::decode_pfm_gray(&read_input(&vp, "validity mask")?).map_err(|e| e.at(&vp))?;
    if mask.width() != m.width || mask.height() != m.height {
        return Err(DslError::Config(format!("{}: mask size differs from frames", vp.display())));
    }
    let kind = m.kind.to_kind().map_err(|e| DslError::Config(format!("{}: {e}", path.display())))?;
    let mm = m.meta;
    Ok(CaptureStack {
        width: m.width,
        height: m.height,
        kind,
        frames,
        valid: mask.data().iter().map(|&v| v > 0.5).collect(),
        meta: CaptureMeta { noise_sigma: mm.noise_sigma, seed: mm.seed, exposure: mm.exposure, intensity: mm.intensity, gain: mm.gain },
    })
}

/// Machine-readable summary of one subcommand run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub command: String,
    pub values: BTreeMap<String, serde_json::Value>,
}

impl Metrics {
    pub fn new(command: &str) -> Self {
        Self { schema_version: METRICS_SCHEMA_VERSION, command: command.to_string(), values: BTreeMap::new() }
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.values.insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rig_round_trip() {
        for rig in [Rig::demo(), Rig::prototype()] {
            let f = RigFile::from_rig(&rig);
            assert_eq!(f.grating.groove_density_lines_per_mm, 500.0);
            let back = f.to_rig().unwrap();
            assert!((back.grating.groove_density() - 5e-4).abs() < 1e-18);
            assert_eq!(back.camera, rig.camera);
            assert_eq!(back.projector, rig.projector);
        }
    }

    #[test]
    fn bad_orders_rejected() {
        assert!(parse_orders(&[2]).is_err());
        assert_eq!(parse_orders(&[-1]).unwrap(), OrderSet { minus: true, plus: false });
    }
}
