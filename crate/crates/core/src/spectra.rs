//! Wavelength axis, spectral curves and spectral metrics.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::optics::Order;

/// Evenly spaced ascending wavelength samples in nm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavelengthGrid {
    start_nm: f64,
    step_nm: f64,
    count: usize,
}

impl WavelengthGrid {
    /// 430 to 660 nm in 5 nm steps, 47 samples.
    pub const STANDARD: WavelengthGrid = WavelengthGrid {
        start_nm: 430.0,
        step_nm: 5.0,
        count: 47,
    };

    pub fn standard() -> Self {
        Self::STANDARD
    }

    /// Grid with both endpoints included. `end - start` must be a whole
    /// number of steps.
    pub fn new(start_nm: f64, end_nm: f64, step_nm: f64) -> Result<Self> {
        if !(start_nm.is_finite() && end_nm.is_finite() && step_nm.is_finite()) {
            return Err(Error::InvalidArgument("non-finite grid bound".into()));
        }
        if step_nm <= 0.0 {
            return Err(Error::InvalidArgument(format!("grid step must be positive, got {step_nm}")));
        }
        if end_nm < start_nm {
            return Err(Error::InvalidArgument("grid end precedes start".into()));
        }
        let steps = (end_nm - start_nm) / step_nm;
        let n = math::round(steps);
        if math::abs(steps - n) > 1e-9 * (1.0 + n) {
            return Err(Error::InvalidArgument(format!(
                "range {start_nm}..{end_nm} is not a whole number of {step_nm} nm steps"
            )));
        }
        Self::with_count(start_nm, step_nm, n as usize + 1)
    }

    pub fn with_count(start_nm: f64, step_nm: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("grid needs at least one sample".into()));
        }
        if !(step_nm > 0.0) || !start_nm.is_finite() || !step_nm.is_finite() {
            return Err(Error::InvalidArgument("grid step must be positive and finite".into()));
        }
        Ok(Self { start_nm, step_nm, count })
    }

    pub fn start_nm(&self) -> f64 {
        self.start_nm
    }

    pub fn end_nm(&self) -> f64 {
        self.wavelength(self.count - 1)
    }

    pub fn step_nm(&self) -> f64 {
        self.step_nm
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn wavelength(&self, i: usize) -> f64 {
        self.start_nm + self.step_nm * i as f64
    }

    pub fn wavelengths(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.wavelength(i))
    }

    /// Index of the sample at `nm`, if it falls on the grid.
    pub fn index_of(&self, nm: f64) -> Option<usize> {
        let t = (nm - self.start_nm) / self.step_nm;
        let i = math::round(t);
        if math::abs(t - i) < 1e-6 && i >= 0.0 && (i as usize) < self.count {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Fractional sample position of `nm`.
    pub fn position(&self, nm: f64) -> f64 {
        (nm - self.start_nm) / self.step_nm
    }

    pub fn contains(&self, nm: f64) -> bool {
        let eps = 1e-9 * self.step_nm;
        nm >= self.start_nm - eps && nm <= self.end_nm() + eps
    }

    pub fn same_as(&self, other: &WavelengthGrid) -> bool {
        self.count == other.count
            && math::abs(self.start_nm - other.start_nm) < 1e-9
            && math::abs(self.step_nm - other.step_nm) < 1e-12
    }
}

impl Default for WavelengthGrid {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Values sampled on a [`WavelengthGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCurve {
    grid: WavelengthGrid,
    values: Vec<f64>,
}

impl SpectralCurve {
    pub fn new(grid: WavelengthGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("spectral values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: WavelengthGrid, value: f64) -> Self {
        Self { grid, values: alloc::vec![value; grid.len()] }
    }

    pub fn from_fn(grid: WavelengthGrid, f: impl Fn(f64) -> f64) -> Self {
        Self { grid, values: grid.wavelengths().map(f).collect() }
    }

    /// Gaussian bump of unit height.
    pub fn gaussian(grid: WavelengthGrid, center_nm: f64, sigma_nm: f64, height: f64) -> Self {
        Self::from_fn(grid, |l| {
            let t = (l - center_nm) / sigma_nm;
            height * math::exp(-0.5 * t * t)
        })
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Linear interpolation at `nm`, clamped to the boundary values.
    pub fn at(&self, nm: f64) -> f64 {
        let n = self.values.len();
        let t = self.grid.position(nm);
        if n == 1 || t <= 0.0 {
            return self.values[0];
        }
        if t >= (n - 1) as f64 {
            return self.values[n - 1];
        }
        let i = math::floor(t) as usize;
        let f = t - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|v| v * k).collect() }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Squared norm of the per-sample forward difference.
    pub fn roughness(&self) -> f64 {
        roughness(&self.values)
    }
}

pub(crate) fn roughness(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum()
}

/// Linear resampling onto `target`; target samples outside the source range
/// take the nearest boundary value.
pub fn resample(curve: &SpectralCurve, target: &WavelengthGrid) -> Result<SpectralCurve> {
    let src = curve.grid();
    let eps = 1e-9;
    if target.end_nm() < src.start_nm() - eps || target.start_nm() > src.end_nm() + eps {
        return Err(Error::DisjointRange {
            source_start: src.start_nm(),
            source_end: src.end_nm(),
            target_start: target.start_nm(),
            target_end: target.end_nm(),
        });
    }
    if src.same_as(target) {
        return Ok(curve.clone());
    }
    Ok(SpectralCurve { grid: *target, values: target.wavelengths().map(|l| curve.at(l)).collect() })
}

/// Full width at half maximum in nm.
///
/// Crossings are found scanning outward from the global peak (first
/// occurrence) and located by linear interpolation. A side with no crossing
/// stops at the grid edge.
pub fn fwhm(curve: &SpectralCurve) -> Result<f64> {
    fwhm_values(curve.values(), curve.grid().step_nm())
}

pub(crate) fn fwhm_values(v: &[f64], step: f64) -> Result<f64> {
    let mut k = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[k] {
            k = i;
        }
    }
    let peak = v[k];
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::UndefinedFwhm);
    }
    let half = 0.5 * peak;
    let mut left = 0.0;
    for i in (1..=k).rev() {
        if v[i - 1] <= half {
            left = (i - 1) as f64 + (half - v[i - 1]) / (v[i] - v[i - 1]);
            break;
        }
    }
    let mut right = (v.len() - 1) as f64;
    for i in k..v.len() - 1 {
        if v[i + 1] <= half {
            right = i as f64 + (v[i] - half) / (v[i] - v[i + 1]);
            break;
        }
    }
    Ok((right - left) * step)
}

/// Diffraction efficiency per order, normalized to the zero order.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencySet {
    zero: SpectralCurve,
    minus: Option<SpectralCurve>,
    plus: Option<SpectralCurve>,
}

impl EfficiencySet {
    pub const MAX_VALUE: f64 = 1.5;

    pub fn new(
        zero: SpectralCurve,
        minus: Option<SpectralCurve>,
        plus: Option<SpectralCurve>,
    ) -> Result<Self> {
        for c in core::iter::once(&zero).chain(minus.iter()).chain(plus.iter()) {
            if !c.grid().same_as(zero.grid()) {
                return Err(Error::GridMismatch);
            }
            if c.values().iter().any(|&v| !(0.0..=Self::MAX_VALUE).contains(&v)) {
                return Err(Error::InvalidArgument("efficiency values must lie in [0, 1.5]".into()));
            }
        }
        Ok(Self { zero, minus, plus })
    }

    /// Flat zero order at 0.5, first orders ramping 0.05 to 0.2 across the grid.
    pub fn synthetic(grid: WavelengthGrid) -> Self {
        let zero = SpectralCurve::constant(grid, 0.5);
        let span = (grid.end_nm() - grid.start_nm()).max(f64::MIN_POSITIVE);
        let ramp = SpectralCurve::from_fn(grid, |l| 0.05 + 0.15 * (l - grid.start_nm()) / span);
        Self { zero, minus: Some(ramp.clone()), plus: Some(ramp) }
    }

    pub fn grid(&self) -> &WavelengthGrid {
        self.zero.grid()
    }

    pub fn get(&self, order: Order) -> Option<&SpectralCurve> {
        match order {
            Order::Zero => Some(&self.zero),
            Order::Minus => self.minus.as_ref(),
            Order::Plus => self.plus.as_ref(),
        }
    }

    /// η at grid index `j`; zero for an uncalibrated order.
    #[inline]
    pub fn eta(&self, order: Order, j: usize) -> f64 {
        self.get(order).map_or(0.0, |c| c.value(j))
    }

    pub fn with_zero(&self, zero: SpectralCurve) -> Result<Self> {
        Self::new(zero, self.minus.clone(), self.plus.clone())
    }
}

/// Camera channel responses and projector channel emissions, in RGB order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSet {
    cam: [SpectralCurve; 3],
    proj: [SpectralCurve; 3],
}

impl ResponseSet {
    pub fn new(cam: [SpectralCurve; 3], proj: [SpectralCurve; 3]) -> Result<Self> {
        let grid = *cam[0].grid();
        for c in cam.iter().chain(proj.iter()) {
            if !c.grid().same_as(&grid) {
                return Err(Error::GridMismatch);
            }
            if !c.is_nonnegative() {
                return Err(Error::InvalidArgument("response curves must be non-negative".into()));
            }
        }
        if proj.iter().any(|c| !(c.sum() > 0.0)) {
            return Err(Error::InvalidArgument("each projector emission curve must integrate to a positive value".into()));
        }
        Ok(Self { cam, proj })
    }

    /// Three overlapping Gaussian bumps per device.
    pub fn synthetic(grid: WavelengthGrid) -> Self {
        let g = |c, s, h| SpectralCurve::gaussian(grid, c, s, h);
        Self {
            cam: [g(600.0, 30.0, 0.9), g(535.0, 35.0, 1.0), g(465.0, 30.0, 0.8)],
            proj: [g(625.0, 16.0, 0.85), g(530.0, 28.0, 0.8), g(455.0, 15.0, 0.9)],
        }
    }

    pub fn grid(&self) -> &WavelengthGrid {
        self.cam[0].grid()
    }

    pub fn cam(&self) -> &[SpectralCurve; 3] {
        &self.cam
    }

    pub fn proj(&self) -> &[SpectralCurve; 3] {
        &self.proj
    }

    #[inline]
    pub fn cam_at(&self, c: usize, j: usize) -> f64 {
        self.cam[c].value(j)
    }

    #[inline]
    pub fn proj_at(&self, c: usize, j: usize) -> f64 {
        self.proj[c].value(j)
    }

    /// Σ_c Ω^proj_c at grid index `j`.
    #[inline]
    pub fn proj_sum(&self, j: usize) -> f64 {
        self.proj[0].value(j) + self.proj[1].value(j) + self.proj[2].value(j)
    }

    /// Radiance emitted at grid index `j` by a projector pixel showing `rgb`.
    #[inline]
    pub fn emitted_at(&self, rgb: [f64; 3], j: usize) -> f64 {
        self.proj[0].value(j) * rgb[0] + self.proj[1].value(j) * rgb[1] + self.proj[2].value(j) * rgb[2]
    }

    /// Radiance emitted at wavelength `nm` (linearly interpolated).
    pub fn emitted_radiance(&self, rgb: [f64; 3], nm: f64) -> f64 {
        self.proj[0].at(nm) * rgb[0] + self.proj[1].at(nm) * rgb[1] + self.proj[2].at(nm) * rgb[2]
    }
}

/// Worst-case on/off camera readings for binary decoding in one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodingMargin {
    pub on_min: f64,
    pub off_max: f64,
}

impl DecodingMargin {
    pub fn margin(&self) -> f64 {
        self.on_min - self.off_max
    }
}

/// Smallest reading of a lit pixel (zero order only) against the largest
/// reading of an unlit pixel (both first orders lit), per camera channel.
pub fn decoding_margin(
    h: &SpectralCurve,
    responses: &ResponseSet,
    eta: &EfficiencySet,
) -> Result<[DecodingMargin; 3]> {
    if !h.grid().same_as(responses.grid()) || !h.grid().same_as(eta.grid()) {
        return Err(Error::GridMismatch);
    }
    let mut out = [DecodingMargin { on_min: 0.0, off_max: 0.0 }; 3];
    for (c, m) in out.iter_mut().enumerate() {
        for j in 0..h.grid().len() {
            let base = responses.cam_at(c, j) * h.value(j) * responses.proj_sum(j);
            m.on_min += base * eta.eta(Order::Zero, j);
            m.off_max += base * (eta.eta(Order::Minus, j) + eta.eta(Order::Plus, j));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid() -> WavelengthGrid {
        WavelengthGrid::standard()
    }

    #[test]
    fn standard_grid_has_47_samples() {
        let g = WavelengthGrid::new(430.0, 660.0, 5.0).unwrap();
        assert_eq!(g.len(), 47);
        assert_eq!(g, WavelengthGrid::STANDARD);
        assert_eq!(g.index_of(545.0), Some(23));
        assert_eq!(g.index_of(547.0), None);
        assert!(WavelengthGrid::new(430.0, 662.0, 5.0).is_err());
        assert!(WavelengthGrid::new(430.0, 660.0, 0.0).is_err());
    }

    #[test]
    fn resample_constant_and_ramp() {
        let c = SpectralCurve::constant(grid(), 0.5);
        let t = WavelengthGrid::new(440.0, 650.0, 7.0).unwrap();
        assert!(resample(&c, &t).unwrap().values().iter().all(|&v| v == 0.5));

        let ramp = SpectralCurve::from_fn(grid(), |l| (l - 430.0) / 230.0);
        assert_relative_eq!(ramp.at(545.0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn resample_ten_to_five_takes_neighbor_means() {
        let coarse = WavelengthGrid::new(430.0, 660.0, 10.0).unwrap();
        let vals: Vec<f64> = (0..coarse.len()).map(|i| ((i * 7) % 5) as f64).collect();
        let c = SpectralCurve::new(coarse, vals.clone()).unwrap();
        let fine = WavelengthGrid::new(430.0, 660.0, 5.0).unwrap();
        let r = resample(&c, &fine).unwrap();
        for i in 0..vals.len() - 1 {
            assert_relative_eq!(r.value(2 * i), vals[i], epsilon = 1e-12);
            assert_relative_eq!(r.value(2 * i + 1), 0.5 * (vals[i] + vals[i + 1]), epsilon = 1e-12);
        }
    }

    #[test]
    fn resample_clamps_and_rejects_disjoint() {
        let src = WavelengthGrid::new(500.0, 600.0, 10.0).unwrap();
        let c = SpectralCurve::from_fn(src, |l| l);
        let r = resample(&c, &grid()).unwrap();
        assert_eq!(r.value(0), 500.0);
        assert_eq!(r.value(46), 600.0);
        let far = WavelengthGrid::new(700.0, 800.0, 10.0).unwrap();
        assert!(matches!(resample(&c, &far), Err(Error::DisjointRange { .. })));
    }

    #[test]
    fn emitted_radiance_sums_channels() {
        let g = WavelengthGrid::with_count(500.0, 5.0, 1).unwrap();
        let k = |v| SpectralCurve::constant(g, v);
        let r = ResponseSet::new([k(1.0), k(1.0), k(1.0)], [k(0.2), k(0.5), k(0.1)]).unwrap();
        assert_eq!(r.emitted_radiance([0.0; 3], 500.0), 0.0);
        assert_relative_eq!(r.emitted_radiance([1.0; 3], 500.0), 0.8, epsilon = 1e-12);
        assert_relative_eq!(r.emitted_radiance([1.0, 0.0, 0.0], 500.0), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn margin_flat_curves() {
        let g = grid();
        let k = |v| SpectralCurve::constant(g, v);
        let r = ResponseSet::new([k(1.0), k(1.0), k(1.0)], [k(1.0), k(1.0), k(1.0)]).unwrap();
        let eta = EfficiencySet::new(k(0.5), Some(k(0.2)), Some(k(0.2))).unwrap();
        for m in decoding_margin(&k(1.0), &r, &eta).unwrap() {
            assert_relative_eq!(m.off_max / m.on_min, 0.8, epsilon = 1e-12);
            assert!(m.margin() > 0.0);
        }
        let no_first = EfficiencySet::new(k(0.5), None, Some(k(0.0))).unwrap();
        for m in decoding_margin(&k(1.0), &r, &no_first).unwrap() {
            assert_eq!(m.off_max, 0.0);
            assert_eq!(m.margin(), m.on_min);
        }
        let weak = EfficiencySet::new(k(0.3), Some(k(0.2)), Some(k(0.2))).unwrap();
        for m in decoding_margin(&k(1.0), &r, &weak).unwrap() {
            assert!(m.margin() < 0.0);
        }
    }

    #[test]
    fn fwhm_examples() {
        let g = grid();
        let boxcar = SpectralCurve::from_fn(g, |l| if (545.0..=550.0).contains(&l) { 1.0 } else { 0.0 });
        assert_relative_eq!(fwhm(&boxcar).unwrap(), 10.0, epsilon = 1e-12);

        let fine = WavelengthGrid::new(430.0, 660.0, 0.01).unwrap();
        let gauss = SpectralCurve::gaussian(fine, 545.0, 8.0, 1.0);
        let expected = 2.0 * (2.0 * core::f64::consts::LN_2).sqrt() * 8.0;
        assert_relative_eq!(fwhm(&gauss).unwrap(), expected, epsilon = 1e-3);
        assert_relative_eq!(expected, 18.8386, epsilon = 1e-4);

        let single = SpectralCurve::from_fn(g, |l| if l == 500.0 { 2.0 } else { 0.0 });
        let w = fwhm(&single).unwrap();
        assert!(w <= 10.0);
        assert_relative_eq!(w, 5.0, epsilon = 1e-12);

        assert_eq!(fwhm(&SpectralCurve::constant(g, 0.0)), Err(Error::UndefinedFwhm));
    }

    #[test]
    fn fwhm_uses_crossings_nearest_global_peak() {
        let g = grid();
        let v = SpectralCurve::from_fn(g, |l| {
            if l == 480.0 {
                0.8
            } else if (550.0..=555.0).contains(&l) {
                1.0
            } else {
                0.0
            }
        });
        assert_relative_eq!(fwhm(&v).unwrap(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn synthetic_defaults_validate() {
        let g = grid();
        let r = ResponseSet::synthetic(g);
        ResponseSet::new(r.cam().clone(), r.proj().clone()).unwrap();
        let e = EfficiencySet::synthetic(g);
        assert_relative_eq!(e.eta(Order::Plus, 0), 0.05, epsilon = 1e-12);
        assert_relative_eq!(e.eta(Order::Minus, 46), 0.2, epsilon = 1e-12);
        assert!(EfficiencySet::new(SpectralCurve::constant(g, 1.6), None, None).is_err());
    }

    fn curve_strategy() -> impl Strategy<Value = SpectralCurve> {
        proptest::collection::vec(0.0..2.0f64, 47).prop_map(|v| SpectralCurve::new(grid(), v).unwrap())
    }

    proptest! {
        #[test]
        fn resample_identity(c in curve_strategy()) {
            prop_assert_eq!(resample(&c, &grid()).unwrap(), c);
        }

        #[test]
        fn emission_is_linear(a in 0.0..0.5f64, b in 0.0..0.5f64,
                              p1 in proptest::array::uniform3(0.0..1.0f64),
                              p2 in proptest::array::uniform3(0.0..1.0f64),
                              nm in 430.0..660.0f64) {
            let r = ResponseSet::synthetic(grid());
            let mix = [a * p1[0] + b * p2[0], a * p1[1] + b * p2[1], a * p1[2] + b * p2[2]];
            let lhs = r.emitted_radiance(mix, nm);
            let rhs = a * r.emitted_radiance(p1, nm) + b * r.emitted_radiance(p2, nm);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn margin_positive_when_pointwise_dominant(h in curve_strategy(),
                                                   z in proptest::collection::vec(0.3..1.0f64, 47),
                                                   f in proptest::collection::vec(0.0..0.49f64, 47)) {
            let g = grid();
            let zero = SpectralCurve::new(g, z.clone()).unwrap();
            let first = SpectralCurve::new(g, z.iter().zip(&f).map(|(a, b)| a * b).collect()).unwrap();
            let eta = EfficiencySet::new(zero, Some(first.clone()), Some(first)).unwrap();
            prop_assume!(h.max() > 1e-3);
            for m in decoding_margin(&h, &ResponseSet::synthetic(g), &eta).unwrap() {
                prop_assert!(m.margin() > 0.0);
            }
        }

        #[test]
        fn fwhm_scale_invariant(c in curve_strategy(), k in 0.01..100.0f64) {
            prop_assume!(c.max() > 1e-6);
            let a = fwhm(&c).unwrap();
            let b = fwhm(&c.scaled(k)).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
