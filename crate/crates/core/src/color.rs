//! Approximate spectrum to display-sRGB conversion for previews.
//!
//! Color matching functions use the multi-lobe Gaussian fit of the CIE 1931
//! 2° observer by Wyman, Sloan and Shirley. Each output channel is normalized
//! so an equal-energy spectrum of unit reflectance maps to neutral white.

use crate::image::{Cube, Image};
use crate::math;
use crate::spectra::WavelengthGrid;
use alloc::vec::Vec;

fn lobe(l: f64, mu: f64, s1: f64, s2: f64) -> f64 {
    let t = (l - mu) / if l < mu { s1 } else { s2 };
    math::exp(-0.5 * t * t)
}

/// CIE 1931 x̄, ȳ, z̄ at `nm`.
pub fn cie_xyz(nm: f64) -> [f64; 3] {
    let x = 1.056 * lobe(nm, 599.8, 37.9, 31.0) + 0.362 * lobe(nm, 442.0, 16.0, 26.7)
        - 0.065 * lobe(nm, 501.1, 20.4, 26.2);
    let y = 0.821 * lobe(nm, 568.8, 46.9, 40.5) + 0.286 * lobe(nm, 530.9, 16.3, 31.1);
    let z = 1.217 * lobe(nm, 437.0, 11.8, 36.0) + 0.681 * lobe(nm, 459.0, 26.0, 13.8);
    [x, y, z]
}

const XYZ_TO_LINEAR_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

fn oetf(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * math::powf(v, 1.0 / 2.4) - 0.055
    }
}

/// Per-band linear-sRGB weights for a grid.
#[derive(Debug, Clone)]
pub struct SrgbTable {
    weights: Vec<[f64; 3]>,
}

impl SrgbTable {
    pub fn new(grid: &WavelengthGrid) -> Self {
        let mut weights: Vec<[f64; 3]> = grid
            .wavelengths()
            .map(|l| {
                let xyz = cie_xyz(l);
                let mut rgb = [0.0; 3];
                for (r, row) in rgb.iter_mut().zip(XYZ_TO_LINEAR_SRGB.iter()) {
                    *r = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
                }
                rgb
            })
            .collect();
        for c in 0..3 {
            let total: f64 = weights.iter().map(|w| w[c]).sum();
            if total.abs() > 0.0 {
                for w in &mut weights {
                    w[c] /= total;
                }
            }
        }
        Self { weights }
    }

    /// Display-encoded sRGB of one spectrum, clipped to [0, 1].
    pub fn convert(&self, spectrum: &[f64]) -> [f64; 3] {
        let mut rgb = [0.0; 3];
        for (w, &s) in self.weights.iter().zip(spectrum) {
            for c in 0..3 {
                rgb[c] += w[c] * s;
            }
        }
        rgb.map(|v| oetf(v.clamp(0.0, 1.0)))
    }
}

/// Preview rendering of a cube.
pub fn to_srgb(cube: &Cube) -> Image {
    let table = SrgbTable::new(cube.grid());
    let mut out = Image::zeros(cube.width(), cube.height());
    for y in 0..cube.height() {
        for x in 0..cube.width() {
            out.set(x, y, table.convert(cube.spectrum(x, y)));
        }
    }
    out
}
