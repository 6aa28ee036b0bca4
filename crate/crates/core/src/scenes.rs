//! Built-in ground-truth scenes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::{Cube, ScalarMap};
use crate::math;
use crate::sim::{Probe, Scene};
use crate::spectra::{SpectralCurve, WavelengthGrid};

fn sig(l: f64, c: f64, w: f64) -> f64 {
    1.0 / (1.0 + math::exp(-(l - c) / w))
}

fn gau(l: f64, c: f64, s: f64) -> f64 {
    let t = (l - c) / s;
    math::exp(-0.5 * t * t)
}

pub const PATCH_NAMES: [&str; 24] = [
    "dark_skin",
    "light_skin",
    "blue_sky",
    "foliage",
    "blue_flower",
    "bluish_green",
    "orange",
    "purplish_blue",
    "moderate_red",
    "purple",
    "yellow_green",
    "orange_yellow",
    "blue",
    "green",
    "red",
    "yellow",
    "magenta",
    "cyan",
    "white",
    "neutral_8",
    "neutral_6_5",
    "neutral_5",
    "neutral_3_5",
    "black",
];

fn patch_value(i: usize, l: f64) -> f64 {
    match i {
        0 => 0.05 + 0.13 * sig(l, 580.0, 30.0),
        1 => 0.18 + 0.4 * sig(l, 580.0, 30.0),
        2 => 0.1 + 0.16 * (1.0 - sig(l, 520.0, 40.0)),
        3 => 0.05 + 0.1 * gau(l, 545.0, 30.0) + 0.06 * sig(l, 640.0, 15.0),
        4 => 0.15 + 0.2 * gau(l, 450.0, 40.0) + 0.15 * sig(l, 620.0, 20.0),
        5 => 0.1 + 0.4 * gau(l, 500.0, 50.0),
        6 => 0.05 + 0.55 * sig(l, 585.0, 15.0),
        7 => 0.06 + 0.3 * gau(l, 450.0, 30.0) + 0.05 * sig(l, 630.0, 15.0),
        8 => 0.08 + 0.45 * sig(l, 600.0, 15.0) + 0.05 * gau(l, 430.0, 20.0),
        9 => 0.07 + 0.1 * gau(l, 440.0, 30.0) + 0.25 * sig(l, 630.0, 15.0),
        10 => 0.06 + 0.5 * sig(l, 530.0, 18.0) * (1.0 - 0.3 * sig(l, 620.0, 20.0)),
        11 => 0.05 + 0.6 * sig(l, 565.0, 15.0),
        12 => 0.05 + 0.3 * gau(l, 445.0, 25.0),
        13 => 0.05 + 0.3 * gau(l, 535.0, 30.0),
        14 => 0.04 + 0.6 * sig(l, 605.0, 15.0),
        15 => 0.05 + 0.75 * sig(l, 545.0, 15.0),
        16 => 0.1 + 0.25 * gau(l, 440.0, 30.0) + 0.55 * sig(l, 600.0, 15.0),
        17 => 0.05 + 0.35 * (1.0 - sig(l, 560.0, 20.0)),
        18 => 0.88 - 0.02 * (l - 430.0) / 230.0,
        19 => 0.58,
        20 => 0.36,
        21 => 0.19,
        22 => 0.09,
        _ => 0.03,
    }
}

/// The 24 ColorChecker-style patch spectra, row by row.
pub fn colorchecker_spectra(grid: WavelengthGrid) -> Vec<SpectralCurve> {
    (0..24).map(|i| SpectralCurve::from_fn(grid, |l| patch_value(i, l))).collect()
}

/// Scene tiled with `spectra` on a `cols × rows` grid at constant depth, with
/// a probe at the center of each tile.
pub fn tiled_scene(
    width: usize,
    height: usize,
    z: f64,
    cols: usize,
    rows: usize,
    spectra: &[SpectralCurve],
    names: &[String],
) -> Result<Scene> {
    let grid = *spectra[0].grid();
    let tile = |x: usize, y: usize| (y * rows / height) * cols + x * cols / width;
    let cube = Cube::from_fn(width, height, grid, |x, y| spectra[tile(x, y)].values().to_vec())?;
    let probes = (0..cols * rows)
        .map(|i| {
            let (c, r) = (i % cols, i / cols);
            Probe {
                name: names[i].clone(),
                x: ((2 * c + 1) * width / (2 * cols)).min(width - 1),
                y: ((2 * r + 1) * height / (2 * rows)).min(height - 1),
            }
        })
        .collect();
    Ok(Scene::new(ScalarMap::filled(width, height, z), cube)?.with_probes(probes))
}

/// Tile index of each pixel for [`tiled_scene`] geometry.
pub fn tile_index(width: usize, height: usize, cols: usize, rows: usize) -> Vec<usize> {
    (0..width * height).map(|i| ((i / width) * rows / height) * cols + (i % width) * cols / width).collect()
}

/// 6 × 4 ColorChecker-style board filling the frame at depth `z`.
pub fn colorchecker_scene(width: usize, height: usize, z: f64, grid: WavelengthGrid) -> Result<Scene> {
    let names: Vec<String> = PATCH_NAMES.iter().map(|s| String::from(*s)).collect();
    tiled_scene(width, height, z, 6, 4, &colorchecker_spectra(grid), &names)
}

/// Centers of the narrowband filter spectra.
pub const BOXCAR_CENTERS: [f64; 9] = [450.0, 475.0, 500.0, 525.0, 550.0, 575.0, 600.0, 625.0, 650.0];

/// Two-sample (10 nm) boxcar of height `peak` starting at the grid sample
/// nearest `center`.
pub fn boxcar(grid: WavelengthGrid, center: f64, peak: f64) -> SpectralCurve {
    let first = grid.index_of(center).unwrap_or_else(|| ((center - grid.start_nm()) / grid.step_nm()) as usize);
    let mut v = alloc::vec![0.0; grid.len()];
    for j in first..(first + 2).min(grid.len()) {
        v[j] = peak;
    }
    SpectralCurve::new(grid, v).expect("finite")
}

/// Nine narrowband patches on a 3 × 3 grid at depth `z`.
pub fn boxcar_scene(width: usize, height: usize, z: f64, grid: WavelengthGrid) -> Result<Scene> {
    let spectra: Vec<SpectralCurve> = BOXCAR_CENTERS.iter().map(|&c| boxcar(grid, c, 0.9)).collect();
    let names: Vec<String> = BOXCAR_CENTERS.iter().map(|c| format!("boxcar_{c:.0}")).collect();
    tiled_scene(width, height, z, 3, 3, &spectra, &names)
}

/// Background and two boxes at depths `baseline_px / d` for the given
/// disparities (background, left box, right box).
pub fn two_box_scene(
    width: usize,
    height: usize,
    baseline_px: f64,
    disparities: [f64; 3],
    grid: WavelengthGrid,
) -> Result<Scene> {
    let [zb, z1, z2] = disparities.map(|d| baseline_px / d);
    let depth: Vec<f64> = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            let inside_y = y >= height / 4 && y < 3 * height / 4;
            if inside_y && x >= width / 8 && x < 3 * width / 8 {
                z1
            } else if inside_y && x >= 5 * width / 8 && x < 7 * width / 8 {
                z2
            } else {
                zb
            }
        })
        .collect();
    let cube = Cube::from_fn(width, height, grid, |x, _| {
        grid.wavelengths().map(|l| 0.5 + 0.2 * math::sin(l / 50.0 + x as f64 * 0.1)).collect()
    })?;
    let probes = alloc::vec![
        Probe { name: "background".into(), x: width / 2, y: height / 8 },
        Probe { name: "box_near".into(), x: 3 * width / 4, y: height / 2 },
        Probe { name: "box_mid".into(), x: width / 4, y: height / 2 },
    ];
    Ok(Scene::new(ScalarMap::from_data(width, height, depth)?, cube)?.with_probes(probes))
}

/// Uniform diffuse target of reflectance `value` at depth `z`.
pub fn flat_target(width: usize, height: usize, z: f64, value: f64, grid: WavelengthGrid) -> Result<Scene> {
    let cube = Cube::from_fn(width, height, grid, |_, _| alloc::vec![value; grid.len()])?;
    Scene::new(ScalarMap::filled(width, height, z), cube)
}

/// Smooth random reflectance: a floor plus three Gaussian bumps, peaking in
/// `[lo, hi]`.
pub fn random_reflectance(rng: &mut impl Rng, grid: WavelengthGrid, lo: f64, hi: f64) -> Vec<f64> {
    let floor = rng.random_range(0.0..0.5);
    let bumps: [(f64, f64, f64); 3] = core::array::from_fn(|_| {
        (rng.random_range(400.0..690.0), rng.random_range(15.0..80.0), rng.random_range(0.0..1.0))
    });
    let raw: Vec<f64> = grid
        .wavelengths()
        .map(|l| floor + bumps.iter().map(|&(c, s, a)| a * gau(l, c, s)).sum::<f64>())
        .collect();
    let max = raw.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let peak = rng.random_range(lo..hi);
    raw.into_iter().map(|v| v / max * peak).collect()
}

/// Plane `z = z0 + sx (x − w/2) + sy (y − h/2)` with random per-pixel
/// reflectance peaking in `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
pub fn random_planar_scene(
    width: usize,
    height: usize,
    z0: f64,
    slope: [f64; 2],
    peak_range: (f64, f64),
    grid: WavelengthGrid,
    seed: u64,
) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cube = Cube::from_fn(width, height, grid, |_, _| random_reflectance(&mut rng, grid, peak_range.0, peak_range.1))?;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let depth = (0..width * height)
        .map(|i| z0 + slope[0] * ((i % width) as f64 - cx) + slope[1] * ((i / width) as f64 - cy))
        .collect();
    Scene::new(ScalarMap::from_data(width, height, depth)?, cube)
}
