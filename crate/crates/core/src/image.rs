//! Dense RGB images, scalar maps and hyperspectral cubes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::spectra::{SpectralCurve, WavelengthGrid};

/// Linear RGB image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::LengthMismatch { expected: width * height * 3, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mean of the three channels.
    #[inline]
    pub fn gray(&self, x: usize, y: usize) -> f64 {
        let [r, g, b] = self.get(x, y);
        (r + g + b) / 3.0
    }

    pub fn row(&self, y: usize) -> &[f64] {
        let w = 3 * self.width;
        &self.data[y * w..(y + 1) * w]
    }

    pub fn rows_mut(&mut self) -> core::slice::ChunksExactMut<'_, f64> {
        let w = (3 * self.width).max(1);
        self.data.chunks_exact_mut(w)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Single-channel map (depth, weights, flags as 0/1).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarMap {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch { expected: width * height, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }
}

/// Hyperspectral cube, row-major pixels with wavelength fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    width: usize,
    height: usize,
    grid: WavelengthGrid,
    data: Vec<f64>,
}

impl Cube {
    pub fn zeros(width: usize, height: usize, grid: WavelengthGrid) -> Self {
        Self { width, height, grid, data: vec![0.0; width * height * grid.len()] }
    }

    pub fn from_data(width: usize, height: usize, grid: WavelengthGrid, data: Vec<f64>) -> Result<Self> {
        let n = width * height * grid.len();
        if data.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: data.len() });
        }
        Ok(Self { width, height, grid, data })
    }

    /// Cube whose spectrum at (x, y) is `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, grid: WavelengthGrid, mut f: impl FnMut(usize, usize) -> Vec<f64>) -> Result<Self> {
        let mut c = Self::zeros(width, height, grid);
        for y in 0..height {
            for x in 0..width {
                let s = f(x, y);
                if s.len() != grid.len() {
                    return Err(Error::LengthMismatch { expected: grid.len(), actual: s.len() });
                }
                c.spectrum_mut(x, y).copy_from_slice(&s);
            }
        }
        Ok(c)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn bands(&self) -> usize {
        self.grid.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn spectrum(&self, x: usize, y: usize) -> &[f64] {
        let n = self.grid.len();
        let i = (y * self.width + x) * n;
        &self.data[i..i + n]
    }

    #[inline]
    pub fn spectrum_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let n = self.grid.len();
        let i = (y * self.width + x) * n;
        &mut self.data[i..i + n]
    }

    pub fn curve(&self, x: usize, y: usize) -> SpectralCurve {
        SpectralCurve::new(self.grid, self.spectrum(x, y).to_vec()).expect("cube values are finite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts() {
        let mut im = Image::zeros(3, 2);
        im.set(2, 1, [1.0, 2.0, 3.0]);
        assert_eq!(im.data()[15..18], [1.0, 2.0, 3.0]);
        assert_eq!(im.gray(2, 1), 2.0);

        let g = WavelengthGrid::with_count(500.0, 10.0, 4).unwrap();
        let c = Cube::from_fn(2, 2, g, |x, y| vec![x as f64, y as f64, 0.0, 1.0]).unwrap();
        assert_eq!(c.spectrum(1, 1), &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(c.data()[4..8], [1.0, 0.0, 0.0, 1.0]);
        assert_eq!(c.data()[8..12], [0.0, 1.0, 0.0, 1.0]);
        assert!(Cube::from_data(2, 2, g, vec![0.0; 3]).is_err());
    }
}
