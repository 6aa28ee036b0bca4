//! Error measures between estimates and ground truth.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{Cube, ScalarMap};
use crate::math;
use crate::reconstruction::DepthMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthErrorStats {
    pub mean_abs: f64,
    pub median_abs: f64,
    pub rmse: f64,
    pub max_abs: f64,
    pub count: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Absolute depth errors over pixels valid in `est`, finite and positive in
/// `gt`, and selected by `mask` when given.
pub fn depth_error(est: &DepthMap, gt: &ScalarMap, mask: Option<&[bool]>) -> Result<DepthErrorStats> {
    if est.width != gt.width() || est.height != gt.height() {
        return Err(Error::InvalidArgument("depth maps differ in size".into()));
    }
    if let Some(m) = mask {
        if m.len() != est.depth.len() {
            return Err(Error::LengthMismatch { expected: est.depth.len(), actual: m.len() });
        }
    }
    let mut errs: Vec<f64> = (0..est.depth.len())
        .filter(|&i| est.valid[i] && mask.is_none_or(|m| m[i]))
        .filter_map(|i| {
            let g = gt.data()[i];
            (g.is_finite() && g > 0.0).then(|| math::abs(est.depth[i] - g))
        })
        .collect();
    if errs.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = errs.len() as f64;
    let mean_abs = errs.iter().sum::<f64>() / n;
    let rmse = math::sqrt(errs.iter().map(|e| e * e).sum::<f64>() / n);
    let max_abs = errs.iter().cloned().fold(0.0, f64::max);
    let count = errs.len();
    Ok(DepthErrorStats { mean_abs, median_abs: median(&mut errs), rmse, max_abs, count })
}

/// Root-mean-square difference of two spectra.
pub fn spectral_rmse(est: &[f64], gt: &[f64]) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch { expected: gt.len(), actual: est.len() });
    }
    if gt.is_empty() {
        return Err(Error::EmptyMask);
    }
    let s: f64 = est.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(math::sqrt(s / gt.len() as f64))
}

/// Angle in radians between two spectra viewed as vectors.
pub fn spectral_angle(est: &[f64], gt: &[f64]) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch { expected: gt.len(), actual: est.len() });
    }
    let dot: f64 = est.iter().zip(gt).map(|(a, b)| a * b).sum();
    let na: f64 = est.iter().map(|a| a * a).sum();
    let nb: f64 = gt.iter().map(|b| b * b).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("spectral angle of a zero spectrum".into()));
    }
    // |a × b| via Lagrange's identity; atan2 stays accurate near zero angle
    let mut cross2 = 0.0;
    for i in 0..est.len() {
        for j in i + 1..est.len() {
            let c = est[i] * gt[j] - est[j] * gt[i];
            cross2 += c * c;
        }
    }
    Ok(math::atan2(math::sqrt(cross2), dot))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeErrorStats {
    /// Mean over pixels of per-pixel RMSE.
    pub mean_rmse: f64,
    /// Mean over pixels of per-pixel RMSE divided by the ground-truth peak.
    pub mean_relative_rmse: f64,
    /// Fraction of pixels whose relative RMSE is within the given bound.
    pub fraction_within: f64,
    pub mean_angle: f64,
    pub count: usize,
}

/// Per-pixel spectral errors over `mask` (or all pixels).
pub fn cube_error(est: &Cube, gt: &Cube, mask: Option<&[bool]>, relative_bound: f64) -> Result<CubeErrorStats> {
    if est.width() != gt.width() || est.height() != gt.height() || !est.grid().same_as(gt.grid()) {
        return Err(Error::GridMismatch);
    }
    let (w, h) = (est.width(), est.height());
    let (mut sr, mut srel, mut sa, mut within, mut count) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if mask.is_some_and(|m| !m[y * w + x]) {
                continue;
            }
            let (e, g) = (est.spectrum(x, y), gt.spectrum(x, y));
            let peak = g.iter().cloned().fold(0.0, f64::max);
            if peak <= 0.0 {
                continue;
            }
            let r = spectral_rmse(e, g)?;
            sr += r;
            srel += r / peak;
            if r <= relative_bound * peak {
                within += 1;
            }
            sa += spectral_angle(e, g).unwrap_or(core::f64::consts::FRAC_PI_2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let n = count as f64;
    Ok(CubeErrorStats {
        mean_rmse: sr / n,
        mean_relative_rmse: srel / n,
        fraction_within: within as f64 / n,
        mean_angle: sa / n,
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identical_inputs_score_zero() {
        let gt = ScalarMap::filled(3, 2, 800.0);
        let est = DepthMap::from_map(&gt);
        let s = depth_error(&est, &gt, None).unwrap();
        assert_eq!((s.mean_abs, s.median_abs, s.rmse, s.count), (0.0, 0.0, 0.0, 6));
        let h = [0.2, 0.5, 0.9];
        assert_eq!(spectral_rmse(&h, &h).unwrap(), 0.0);
        assert!(spectral_angle(&h, &h).unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_bias() {
        let gt = ScalarMap::filled(4, 4, 800.0);
        let est = DepthMap::from_map(&ScalarMap::filled(4, 4, 801.0));
        let s = depth_error(&est, &gt, None).unwrap();
        assert_relative_eq!(s.mean_abs, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.median_abs, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let gt = ScalarMap::filled(2, 2, 800.0);
        let est = DepthMap::from_map(&gt);
        assert_eq!(depth_error(&est, &gt, Some(&[false; 4])), Err(Error::EmptyMask));
        let mut none = est.clone();
        none.valid = vec![false; 4];
        assert_eq!(depth_error(&none, &gt, None), Err(Error::EmptyMask));
    }

    #[test]
    fn right_angle() {
        assert_relative_eq!(spectral_angle(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), core::f64::consts::FRAC_PI_2);
    }

    proptest! {
        #[test]
        fn angle_ignores_positive_scale(v in proptest::collection::vec(0.01..1.0f64, 47), w in proptest::collection::vec(0.01..1.0f64, 47), k in 0.01..100.0f64) {
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let a = spectral_angle(&v, &w).unwrap();
            let b = spectral_angle(&scaled, &w).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
