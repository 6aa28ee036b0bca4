//! Projector pattern sets: binary codes, scanlines and reference frames.
//!
//! Patterns are procedural so a full scanline sweep costs nothing until it is
//! sampled; [`Pattern::rasterize`] produces the pixel form when needed.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Column,
    Row,
}

/// Geometry of one pattern, before intensity scaling.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Lit where bit `bit` of the column (or row) index is set; inverted
    /// patterns light the complement.
    Binary { axis: Axis, bit: u32, inverted: bool },
    /// Lit on columns `[start, start + width)`.
    Scanline { start: u32, width: u32 },
    /// Same RGB value everywhere.
    Uniform([f64; 3]),
    /// Arbitrary RGB raster at projector resolution.
    Raster(Arc<Image>),
}

/// One projector frame: a shape times a scalar level in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub shape: Shape,
    pub level: f64,
}

impl Pattern {
    pub fn new(shape: Shape) -> Self {
        Self { shape, level: 1.0 }
    }

    pub fn white() -> Self {
        Self::new(Shape::Uniform([1.0; 3]))
    }

    pub fn black() -> Self {
        Self::new(Shape::Uniform([0.0; 3]))
    }

    /// Raster pattern; values must lie in [0, 1].
    pub fn raster(image: Image) -> Result<Self> {
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pattern values must lie in [0, 1]".into()));
        }
        Ok(Self::new(Shape::Raster(Arc::new(image))))
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { shape: self.shape.clone(), level: self.level * a }
    }

    /// RGB value at an in-range projector pixel.
    #[inline]
    pub fn value(&self, col: u32, row: u32) -> [f64; 3] {
        let l = self.level;
        match &self.shape {
            Shape::Binary { axis, bit, inverted } => {
                let q = match axis {
                    Axis::Column => col,
                    Axis::Row => row,
                };
                let on = ((q >> bit) & 1 == 1) != *inverted;
                if on {
                    [l; 3]
                } else {
                    [0.0; 3]
                }
            }
            Shape::Scanline { start, width } => {
                if col >= *start && col - start < *width {
                    [l; 3]
                } else {
                    [0.0; 3]
                }
            }
            Shape::Uniform(rgb) => [rgb[0] * l, rgb[1] * l, rgb[2] * l],
            Shape::Raster(im) => {
                if (col as usize) < im.width() && (row as usize) < im.height() {
                    let v = im.get(col as usize, row as usize);
                    [v[0] * l, v[1] * l, v[2] * l]
                } else {
                    [0.0; 3]
                }
            }
        }
    }

    /// Channel-uniform (white/gray/black only) pattern.
    pub fn is_achromatic(&self) -> bool {
        match &self.shape {
            Shape::Uniform(v) => v[0] == v[1] && v[1] == v[2],
            Shape::Raster(im) => im.data().chunks_exact(3).all(|p| p[0] == p[1] && p[1] == p[2]),
            _ => true,
        }
    }

    pub fn rasterize(&self, width: u32, height: u32) -> Image {
        let mut im = Image::zeros(width as usize, height as usize);
        for r in 0..height {
            for c in 0..width {
                im.set(c as usize, r as usize, self.value(c, r));
            }
        }
        im
    }
}

/// Nearest projector column or row index of a fractional coordinate
/// (halves round up).
#[inline]
pub fn nearest_index(q: f64) -> i64 {
    math::floor(q + 0.5) as i64
}

/// `i`-th bit of `q` (LSB = 0).
#[inline]
pub fn bit(q: u32, i: u32) -> u32 {
    if i >= 32 {
        0
    } else {
        (q >> i) & 1
    }
}

/// Number of bits needed to index `n` positions.
pub fn bits_for(n: u32) -> u32 {
    if n <= 1 {
        1
    } else {
        32 - (n - 1).leading_zeros()
    }
}

/// Scanline sweep parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanlineSpec {
    pub projector_width: u32,
    pub line_width: u32,
    pub shift: u32,
}

impl ScanlineSpec {
    pub fn new(projector_width: u32, line_width: u32, shift: u32) -> Result<Self> {
        if !(1 <= shift && shift <= line_width && line_width <= projector_width) {
            return Err(Error::InvalidArgument(format!(
                "scanline needs 1 <= shift <= width <= projector width, got s={shift}, w={line_width}, W={projector_width}"
            )));
        }
        Ok(Self { projector_width, line_width, shift })
    }

    /// Number of lines that fit entirely inside the projector.
    pub fn count(&self) -> usize {
        ((self.projector_width - self.line_width) / self.shift) as usize + 1
    }

    #[inline]
    pub fn start(&self, i: usize) -> u32 {
        self.shift * i as u32
    }

    /// Fractional column at the middle of line `i`.
    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.start(i) as f64 + (self.line_width as f64 - 1.0) / 2.0
    }

    /// Indices of the lines covering integer column `col`.
    pub fn covering(&self, col: i64) -> core::ops::Range<usize> {
        if col < 0 || col >= self.projector_width as i64 {
            return 0..0;
        }
        let s = self.shift as i64;
        let w = self.line_width as i64;
        let lo = (col - w + 1).max(0);
        let first = (lo + s - 1) / s;
        let last = (col / s).min(self.count() as i64 - 1);
        if last < first {
            0..0
        } else {
            first as usize..last as usize + 1
        }
    }

    pub fn pattern(&self, i: usize) -> Pattern {
        Pattern::new(Shape::Scanline { start: self.start(i), width: self.line_width })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternSetKind {
    Binary { column_bits: u32, row_bits: u32, complement: bool },
    Scanline(ScanlineSpec),
    Reference,
}

/// Ordered projector frames at a fixed resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub kind: PatternSetKind,
    pub width: u32,
    pub height: u32,
    pub patterns: Vec<Pattern>,
}

impl PatternSet {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Pattern> {
        self.patterns.iter()
    }
}

/// Plain binary codes: column bits (LSB first) then row bits. With
/// `complement`, each code pattern is followed by its inverse.
pub fn gen_binary_codes(width: u32, height: u32, complement: bool) -> Result<PatternSet> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("projector resolution must be positive".into()));
    }
    let (cb, rb) = (bits_for(width), bits_for(height));
    let mut patterns = Vec::new();
    for (axis, n) in [(Axis::Column, cb), (Axis::Row, rb)] {
        for b in 0..n {
            patterns.push(Pattern::new(Shape::Binary { axis, bit: b, inverted: false }));
            if complement {
                patterns.push(Pattern::new(Shape::Binary { axis, bit: b, inverted: true }));
            }
        }
    }
    Ok(PatternSet {
        kind: PatternSetKind::Binary { column_bits: cb, row_bits: rb, complement },
        width,
        height,
        patterns,
    })
}

/// White line of `line_width` columns swept in steps of `shift`.
pub fn gen_scanlines(width: u32, height: u32, line_width: u32, shift: u32) -> Result<PatternSet> {
    if height == 0 {
        return Err(Error::InvalidArgument("projector resolution must be positive".into()));
    }
    let spec = ScanlineSpec::new(width, line_width, shift)?;
    Ok(PatternSet {
        kind: PatternSetKind::Scanline(spec),
        width,
        height,
        patterns: (0..spec.count()).map(|i| spec.pattern(i)).collect(),
    })
}

/// All-black then all-white frames.
pub fn gen_references(width: u32, height: u32) -> PatternSet {
    PatternSet {
        kind: PatternSetKind::Reference,
        width,
        height,
        patterns: alloc::vec![Pattern::black(), Pattern::white()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bit_examples() {
        assert_eq!([bit(5, 0), bit(5, 1), bit(5, 2)], [1, 0, 1]);
        assert!((0..12).all(|i| bit(0, i) == 0));
        let q = 613u32;
        let back: u32 = (0..10).map(|i| bit(q, i) << i).sum();
        assert_eq!(back, q);
    }

    #[test]
    fn binary_set_layout() {
        let set = gen_binary_codes(640, 360, false).unwrap();
        assert_eq!(set.len(), 10 + 9);
        assert!(matches!(set.kind, PatternSetKind::Binary { column_bits: 10, row_bits: 9, .. }));
        let p0 = &set.patterns[0];
        for c in 0..8 {
            assert_eq!(p0.value(c, 3)[0], (c % 2) as f64);
        }
        assert!(set.iter().all(|p| p.is_achromatic()));
        for r in [0u32, 100, 359] {
            for c in [0u32, 1, 333, 639] {
                let v = set.patterns[12].value(c, r);
                assert!(v[0] == v[1] && v[1] == v[2]);
            }
        }
        assert_eq!(gen_binary_codes(1024, 768, true).unwrap().len(), 40);
    }

    #[test]
    fn scanline_counts() {
        let set = gen_scanlines(640, 360, 5, 2).unwrap();
        assert_eq!(set.len(), 318);
        let full = gen_scanlines(640, 10, 640, 1).unwrap();
        assert_eq!(full.len(), 1);
        assert!((0..640).all(|c| full.patterns[0].value(c, 0) == [1.0; 3]));
        assert!(gen_scanlines(640, 360, 2, 5).is_err());
    }

    #[test]
    fn scanline_coverage_counts() {
        let spec = ScanlineSpec::new(640, 5, 2).unwrap();
        let set = gen_scanlines(640, 1, 5, 2).unwrap();
        for c in 0..640u32 {
            let lit = set.iter().filter(|p| p.value(c, 0)[0] > 0.0).count();
            assert_eq!(lit, spec.covering(c as i64).len());
            if c >= 5 && c < 640 - 5 {
                assert!(lit == 2 || lit == 3, "column {c} lit {lit}");
            }
        }
        assert!(spec.covering(639).is_empty());
    }

    proptest! {
        #[test]
        fn binary_codes_distinguish_columns(a in 0u32..640, b in 0u32..640) {
            prop_assume!(a != b);
            let set = gen_binary_codes(640, 360, false).unwrap();
            prop_assert!(set.patterns[..10].iter().any(|p| p.value(a, 0) != p.value(b, 0)));
        }

        #[test]
        fn interior_scanline_coverage(w in 1u32..12, s in 1u32..12, c in 0i64..600) {
            prop_assume!(s <= w);
            let spec = ScanlineSpec::new(600, w, s).unwrap();
            let last_start = spec.start(spec.count() - 1) as i64;
            prop_assume!(c >= w as i64 && c < last_start);
            let n = spec.covering(c).len() as u32;
            prop_assert!(n == w / s || n == (w + s - 1) / s);
        }
    }
}
