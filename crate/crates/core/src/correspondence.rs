//! Camera pixel + depth to projector column, per diffraction order.
//!
//! The zero order is plain perspective transfer. First orders use a fitted
//! surrogate: for every (lattice node, wavelength knot, order) the column is
//! fitted as `α z^β + γ` over depth; queries interpolate linearly in
//! wavelength and with Catmull-Rom splines across the pixel lattice.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::math;
use crate::optics::{solve_grating_point, Order, OrderSet, Rig};
use crate::par;
use crate::patterns::{nearest_index, ScanlineSpec};
use crate::spectra::WavelengthGrid;

/// Wavelength knots sampled by default during calibration.
pub const DEFAULT_KNOTS_NM: [f64; 7] = [430.0, 600.0, 610.0, 620.0, 640.0, 650.0, 660.0];

/// Depths sampled by default during calibration.
pub const DEFAULT_DEPTHS_MM: [f64; 5] = [500.0, 625.0, 750.0, 875.0, 1000.0];

/// Zero-order projector pixel (column, row) seen at camera pixel `p`, depth `z`.
pub fn zero_order(p: [f64; 2], z: f64, rig: &Rig) -> Result<[f64; 2]> {
    rig.projector.project(&rig.camera.unproject(p, z)?)
}

/// One measured or simulated first-order correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondenceSample {
    pub pixel: [f64; 2],
    pub depth_mm: f64,
    pub order: Order,
    pub wavelength_nm: f64,
    pub column: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl PowerLaw {
    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        self.alpha * math::powf(z, self.beta) + self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub law: PowerLaw,
    /// Root-mean-square residual over the fitted samples.
    pub rms: f64,
    pub iterations: usize,
}

const LM_MAX_ITERS: usize = 500;

/// Least-squares fit of `q = α z^β + γ`.
///
/// Depths are rescaled by their geometric mean so the parameters are well
/// conditioned; a coarse scan over β seeds Levenberg-Marquardt.
pub fn fit_power_law(depths: &[f64], columns: &[f64]) -> Result<PowerLawFit> {
    let n = depths.len();
    if columns.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: columns.len() });
    }
    if depths.iter().chain(columns).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite fit input".into()));
    }
    if let Some(&z) = depths.iter().find(|&&z| !(z > 0.0)) {
        return Err(Error::NonPositiveDepth(z));
    }
    let mut distinct: Vec<f64> = depths.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::InvalidArgument("power-law fit needs at least 4 distinct depths".into()));
    }

    let nf = n as f64;
    let mean_q = columns.iter().sum::<f64>() / nf;
    let scale_q = columns.iter().fold(1.0f64, |m, q| m.max(math::abs(*q)));
    if columns.iter().all(|q| math::abs(q - mean_q) <= 1e-12 * scale_q) {
        return Ok(PowerLawFit { law: PowerLaw { alpha: 0.0, beta: -1.0, gamma: mean_q }, rms: 0.0, iterations: 0 });
    }

    let zref = math::exp(depths.iter().map(|z| math::ln(*z)).sum::<f64>() / nf);
    let ls: Vec<f64> = depths.iter().map(|z| math::ln(z / zref)).collect();
    let sse = |a: f64, b: f64, c: f64| -> f64 {
        ls.iter().zip(columns).map(|(l, q)| {
            let r = a * math::exp(b * l) + c - q;
            r * r
        }).sum()
    };
    let linear = |b: f64| -> (f64, f64) {
        let u: Vec<f64> = ls.iter().map(|l| math::exp(b * l)).collect();
        let mu = u.iter().sum::<f64>() / nf;
        let suu: f64 = u.iter().map(|x| (x - mu) * (x - mu)).sum();
        let suq: f64 = u.iter().zip(columns).map(|(x, q)| (x - mu) * (q - mean_q)).sum();
        let a = if suu > 0.0 { suq / suu } else { 0.0 };
        (a, mean_q - a * mu)
    };

    let mut best = (f64::INFINITY, 0.0, -1.0, mean_q);
    for k in 0..=160 {
        let b = -5.0 + 0.05 * k as f64;
        if math::abs(b) < 1e-9 {
            continue;
        }
        let (a, c) = linear(b);
        let e = sse(a, b, c);
        if e < best.0 {
            best = (e, a, b, c);
        }
    }

    let (mut e, mut a, mut b, mut c) = best;
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < LM_MAX_ITERS {
        iterations += 1;
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (l, q) in ls.iter().zip(columns) {
            let u = math::exp(b * l);
            let j = Vector3::new(u, a * u * l, 1.0);
            let r = a * u + c - q;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        if jtr.norm() <= 1e-15 * (1.0 + e) * scale_q {
            converged = true;
            break;
        }
        let floor = 1e-12 * jtj.trace().max(f64::MIN_POSITIVE);
        let mut stepped = false;
        while mu < 1e20 {
            let mut m = jtj;
            for i in 0..3 {
                m[(i, i)] += mu * jtj[(i, i)].max(floor);
            }
            let Some(delta) = m.lu().solve(&(-jtr)) else {
                mu *= 10.0;
                continue;
            };
            let (na, nb, nc) = (a + delta.x, b + delta.y, c + delta.z);
            let ne = sse(na, nb, nc);
            if ne.is_finite() && ne < e {
                let rel = (e - ne) / e.max(f64::MIN_POSITIVE);
                let small_step = delta.norm() <= 1e-14 * (1.0 + math::abs(na) + math::abs(nb) + math::abs(nc));
                a = na;
                b = nb;
                c = nc;
                e = ne;
                mu = (mu / 3.0).max(1e-15);
                stepped = true;
                if rel < 1e-15 || small_step || e <= 1e-28 * scale_q * scale_q * nf {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if !stepped {
            converged = true;
        }
        if converged {
            break;
        }
    }

    let alpha = a * math::powf(zref, -b);
    let fit = PowerLawFit { law: PowerLaw { alpha, beta: b, gamma: c }, rms: math::sqrt(e / nf), iterations };
    if converged {
        Ok(fit)
    } else {
        Err(Error::FitFailed { best: fit })
    }
}

/// Regular lattice of camera pixels carrying the fitted surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelLattice {
    pub origin: [f64; 2],
    pub spacing: [f64; 2],
    pub counts: [usize; 2],
}

/// Where a pixel falls in the lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    ix: usize,
    fx: f64,
    iy: usize,
    fy: f64,
    clamped: bool,
}

impl PixelLattice {
    pub fn new(origin: [f64; 2], spacing: [f64; 2], counts: [usize; 2]) -> Result<Self> {
        if counts[0] < 2 || counts[1] < 2 {
            return Err(Error::InvalidArgument("lattice needs at least 2 nodes per axis".into()));
        }
        if !(spacing[0] > 0.0 && spacing[1] > 0.0) {
            return Err(Error::InvalidArgument("lattice spacing must be positive".into()));
        }
        Ok(Self { origin, spacing, counts })
    }

    /// `nx × ny` nodes spanning pixels `[0, width-1] × [0, height-1]`.
    pub fn spanning(width: u32, height: u32, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument("lattice needs at least 2 nodes per axis".into()));
        }
        let sx = (width.max(2) - 1) as f64 / (nx - 1) as f64;
        let sy = (height.max(2) - 1) as f64 / (ny - 1) as f64;
        Self::new([0.0, 0.0], [sx, sy], [nx, ny])
    }

    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> [f64; 2] {
        [self.origin[0] + self.spacing[0] * ix as f64, self.origin[1] + self.spacing[1] * iy as f64]
    }

    /// Nodes in row-major order.
    pub fn nodes(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.counts[1]).flat_map(move |iy| (0..self.counts[0]).map(move |ix| self.node(ix, iy)))
    }

    /// Node indices of an exact node position.
    pub fn node_index(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let tx = (p[0] - self.origin[0]) / self.spacing[0];
        let ty = (p[1] - self.origin[1]) / self.spacing[1];
        let (rx, ry) = (math::round(tx), math::round(ty));
        if math::abs(tx - rx) > 1e-6 || math::abs(ty - ry) > 1e-6 {
            return None;
        }
        if rx < 0.0 || ry < 0.0 || rx as usize >= self.counts[0] || ry as usize >= self.counts[1] {
            return None;
        }
        Some((rx as usize, ry as usize))
    }

    fn locate(&self, p: [f64; 2]) -> Result<Cell> {
        let mut clamped = false;
        let mut axis = |v: f64, k: usize| -> Result<(usize, f64)> {
            let n = self.counts[k];
            let t = (v - self.origin[k]) / self.spacing[k];
            if !(t >= -1.0 && t <= n as f64) {
                return Err(Error::OutOfHull("pixel beyond the lattice margin"));
            }
            let tc = if t < 0.0 || t > (n - 1) as f64 {
                clamped = true;
                t.clamp(0.0, (n - 1) as f64)
            } else {
                t
            };
            let i = (math::floor(tc) as usize).min(n - 2);
            Ok((i, tc - i as f64))
        };
        let (ix, fx) = axis(p[0], 0)?;
        let (iy, fy) = axis(p[1], 1)?;
        Ok(Cell { ix, fx, iy, fy, clamped })
    }
}

#[inline]
fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    let [p0, p1, p2, p3] = p;
    0.5 * (2.0 * p1
        + (p2 - p0) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t * t * t)
}

/// Four spline support values around `i` (the cell's left node), with
/// linearly extrapolated ghosts past either end.
#[inline]
fn support(i: usize, n: usize, mut get: impl FnMut(usize) -> Option<f64>) -> Option<[f64; 4]> {
    let v1 = get(i)?;
    let v2 = get(i + 1)?;
    let v0 = if i > 0 { get(i - 1)? } else { 2.0 * v1 - v2 };
    let v3 = if i + 2 < n { get(i + 2)? } else { 2.0 * v2 - v1 };
    Some([v0, v1, v2, v3])
}

/// Result of a surrogate query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub column: f64,
    /// The query lay outside the sampled hull and was clamped or extrapolated.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct DepthTable {
    z0: f64,
    dz: f64,
    count: usize,
    values: Vec<f64>,
}

/// Fitted first-order surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceModel {
    lattice: PixelLattice,
    knots: Vec<f64>,
    depths: Vec<f64>,
    projector_width: u32,
    fits: Vec<Option<PowerLawFit>>,
    table: Option<DepthTable>,
}

impl CorrespondenceModel {
    /// Fits every (order, knot, node) group of `samples`. Sample pixels must
    /// sit on lattice nodes and wavelengths on knots. Groups with fewer than
    /// four depths stay unfitted; queries touching them fail.
    pub fn fit(
        samples: &[CorrespondenceSample],
        lattice: PixelLattice,
        knots: &[f64],
        projector_width: u32,
    ) -> Result<Self> {
        check_knots(knots)?;
        let groups = 2 * knots.len() * lattice.len();
        let mut bins: Vec<Vec<(f64, f64)>> = vec![Vec::new(); groups];
        let mut depths: Vec<f64> = Vec::new();
        for s in samples {
            let slot = match s.order {
                Order::Zero => return Err(Error::UnsupportedOrder(0)),
                o => o.first_index(),
            };
            let (ix, iy) = lattice
                .node_index(s.pixel)
                .ok_or_else(|| Error::InvalidArgument("sample pixel is not a lattice node".into()))?;
            let l = knots
                .iter()
                .position(|k| math::abs(k - s.wavelength_nm) < 1e-6)
                .ok_or_else(|| Error::InvalidArgument("sample wavelength is not a model knot".into()))?;
            let g = ((slot * knots.len() + l) * lattice.counts[1] + iy) * lattice.counts[0] + ix;
            bins[g].push((s.depth_mm, s.column));
            depths.push(s.depth_mm);
        }
        depths.sort_by(|a, b| a.total_cmp(b));
        depths.dedup_by(|a, b| math::abs(*a - *b) < 1e-9);
        if depths.len() < 4 {
            return Err(Error::InvalidArgument("samples span fewer than 4 depths".into()));
        }
        let fits = par::map_indices(groups, |g| {
            let bin = &bins[g];
            if bin.len() < 4 {
                return None;
            }
            let z: Vec<f64> = bin.iter().map(|s| s.0).collect();
            let q: Vec<f64> = bin.iter().map(|s| s.1).collect();
            match fit_power_law(&z, &q) {
                Ok(f) => Some(f),
                Err(Error::FitFailed { best }) if best.rms.is_finite() => Some(best),
                Err(_) => None,
            }
        });
        Ok(Self { lattice, knots: knots.to_vec(), depths, projector_width, fits, table: None })
    }

    /// Reassembles a model from stored parts (fits indexed
    /// `[order][knot][row][col]`, order −1 first).
    pub fn from_parts(
        lattice: PixelLattice,
        knots: Vec<f64>,
        depths: Vec<f64>,
        projector_width: u32,
        fits: Vec<Option<PowerLawFit>>,
    ) -> Result<Self> {
        check_knots(&knots)?;
        let expected = 2 * knots.len() * lattice.len();
        if fits.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: fits.len() });
        }
        if depths.len() < 2 || depths.windows(2).any(|w| !(w[1] > w[0])) || !(depths[0] > 0.0) {
            return Err(Error::InvalidArgument("depth list must be positive and ascending".into()));
        }
        if fits.iter().flatten().any(|f| !f.rms.is_finite()) {
            return Err(Error::InvalidArgument("fit residuals must be finite".into()));
        }
        Ok(Self { lattice, knots, depths, projector_width, fits, table: None })
    }

    /// Tabulates every node over the queryable depth range at `step_mm`.
    pub fn with_depth_table(mut self, step_mm: f64) -> Result<Self> {
        if !(step_mm > 0.0) {
            return Err(Error::InvalidArgument("table step must be positive".into()));
        }
        let (lo, hi) = self.depth_limits();
        let z0 = math::floor(lo / step_mm) * step_mm;
        let count = (math::ceil((hi - z0) / step_mm) as usize + 1).max(2);
        let mut values = Vec::with_capacity(self.fits.len() * count);
        for f in &self.fits {
            for k in 0..count {
                let z = z0 + step_mm * k as f64;
                values.push(f.map_or(f64::NAN, |f| f.law.eval(z)));
            }
        }
        self.table = Some(DepthTable { z0, dz: step_mm, count, values });
        Ok(self)
    }

    pub fn table_step(&self) -> Option<f64> {
        self.table.as_ref().map(|t| t.dz)
    }

    pub fn lattice(&self) -> &PixelLattice {
        &self.lattice
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn projector_width(&self) -> u32 {
        self.projector_width
    }

    pub fn fits(&self) -> &[Option<PowerLawFit>] {
        &self.fits
    }

    pub fn fit_at(&self, order: Order, knot: usize, ix: usize, iy: usize) -> Option<&PowerLawFit> {
        let slot = first_slot(order).ok()?;
        self.fits.get(self.index(slot, knot, ix, iy))?.as_ref()
    }

    /// Mean and max of the per-group rms residuals.
    pub fn residual_stats(&self) -> (f64, f64, usize) {
        let mut n = 0;
        let (mut sum, mut max) = (0.0, 0.0f64);
        for f in self.fits.iter().flatten() {
            n += 1;
            sum += f.rms;
            max = max.max(f.rms);
        }
        (if n > 0 { sum / n as f64 } else { 0.0 }, max, n)
    }

    /// Depths accepted by queries: the sampled range widened by a quarter of
    /// its span on both sides.
    pub fn depth_limits(&self) -> (f64, f64) {
        let lo = self.depths[0];
        let hi = *self.depths.last().unwrap();
        let m = 0.25 * (hi - lo);
        ((lo - m).max(1e-3), hi + m)
    }

    fn wavelength_margin(&self) -> f64 {
        if self.knots.len() > 1 {
            0.05 * (self.knots[self.knots.len() - 1] - self.knots[0])
        } else {
            5.0
        }
    }

    #[inline]
    fn index(&self, slot: usize, knot: usize, ix: usize, iy: usize) -> usize {
        ((slot * self.knots.len() + knot) * self.lattice.counts[1] + iy) * self.lattice.counts[0] + ix
    }

    #[inline]
    fn node_value(&self, g: usize, z: f64) -> Option<f64> {
        if let Some(t) = &self.table {
            let pos = (z - t.z0) / t.dz;
            if pos >= 0.0 && pos <= (t.count - 1) as f64 {
                let k = (math::floor(pos) as usize).min(t.count - 2);
                let f = pos - k as f64;
                let row = &t.values[g * t.count..(g + 1) * t.count];
                let (a, b) = (row[k], row[k + 1]);
                if a.is_nan() || b.is_nan() {
                    return None;
                }
                return Some(a + (b - a) * f);
            }
        }
        self.fits[g].map(|f| f.law.eval(z))
    }

    fn knot_value(&self, slot: usize, knot: usize, cell: &Cell, z: f64) -> Option<f64> {
        let [nx, ny] = self.lattice.counts;
        let row = |iy: usize| -> Option<f64> {
            let s = support(cell.ix, nx, |ix| self.node_value(self.index(slot, knot, ix, iy), z))?;
            Some(catmull_rom(s, cell.fx))
        };
        let s = support(cell.iy, ny, row)?;
        Some(catmull_rom(s, cell.fy))
    }

    fn check_depth(&self, z: f64) -> Result<bool> {
        if !(z > 0.0) {
            return Err(Error::NonPositiveDepth(z));
        }
        let (lo, hi) = self.depth_limits();
        if z < lo || z > hi {
            return Err(Error::OutOfHull("depth beyond the sampled range margin"));
        }
        Ok(z < self.depths[0] || z > *self.depths.last().unwrap())
    }

    /// Knot index and interpolation weight for `nm` (clamped within the margin).
    fn bracket(&self, nm: f64) -> Result<(usize, f64, bool)> {
        let k = &self.knots;
        let n = k.len();
        let margin = self.wavelength_margin();
        if nm < k[0] - margin || nm > k[n - 1] + margin || !nm.is_finite() {
            return Err(Error::OutOfHull("wavelength beyond the knot range margin"));
        }
        if n == 1 {
            return Ok((0, 0.0, math::abs(nm - k[0]) > 1e-9));
        }
        if nm <= k[0] {
            return Ok((0, 0.0, nm < k[0]));
        }
        if nm >= k[n - 1] {
            return Ok((n - 2, 1.0, nm > k[n - 1]));
        }
        let mut i = 0;
        while i + 2 < n && nm >= k[i + 1] {
            i += 1;
        }
        Ok((i, (nm - k[i]) / (k[i + 1] - k[i]), false))
    }

    /// First-order projector column with an extrapolation flag.
    pub fn query_flagged(&self, p: [f64; 2], z: f64, order: Order, nm: f64) -> Result<Query> {
        let slot = first_slot(order)?;
        let (l, t, fl) = self.bracket(nm)?;
        let cell = self.lattice.locate(p)?;
        let fz = self.check_depth(z)?;
        let missing = Error::OutOfHull("lattice node without fitted samples");
        let v0 = self.knot_value(slot, l, &cell, z).ok_or(missing.clone())?;
        let column = if t == 0.0 {
            v0
        } else {
            let v1 = self.knot_value(slot, l + 1, &cell, z).ok_or(missing)?;
            v0 + (v1 - v0) * t
        };
        Ok(Query { column, extrapolated: fl || fz || cell.clamped })
    }

    pub fn query(&self, p: [f64; 2], z: f64, order: Order, nm: f64) -> Result<f64> {
        Ok(self.query_flagged(p, z, order, nm)?.column)
    }

    /// Columns for every wavelength of `grid`, sharing the per-knot spatial
    /// interpolation.
    pub fn columns(&self, p: [f64; 2], z: f64, order: Order, grid: &WavelengthGrid) -> Result<Vec<f64>> {
        let slot = first_slot(order)?;
        let cell = self.lattice.locate(p)?;
        self.check_depth(z)?;
        let mut at_knot: Vec<Option<f64>> = vec![None; self.knots.len()];
        let mut out = Vec::with_capacity(grid.len());
        for nm in grid.wavelengths() {
            let (l, t, _) = self.bracket(nm)?;
            let mut get = |k: usize| -> Result<f64> {
                if at_knot[k].is_none() {
                    at_knot[k] = Some(
                        self.knot_value(slot, k, &cell, z).ok_or(Error::OutOfHull("lattice node without fitted samples"))?,
                    );
                }
                Ok(at_knot[k].unwrap())
            };
            let v0 = get(l)?;
            out.push(if t == 0.0 { v0 } else { v0 + (get(l + 1)? - v0) * t });
        }
        Ok(out)
    }
}

fn check_knots(knots: &[f64]) -> Result<()> {
    if knots.is_empty() || knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
        return Err(Error::InvalidArgument("wavelength knots must be finite and strictly ascending".into()));
    }
    Ok(())
}

fn first_slot(order: Order) -> Result<usize> {
    match order {
        Order::Zero => Err(Error::UnsupportedOrder(0)),
        o => Ok(o.first_index()),
    }
}

/// First orders whose columns stay on the projector, on the correct side of
/// the zero order, for every wavelength of `grid`.
pub fn valid_orders(p: [f64; 2], z: f64, model: &CorrespondenceModel, rig: &Rig, grid: &WavelengthGrid) -> OrderSet {
    let Ok(q0) = zero_order(p, z, rig) else {
        return OrderSet::NONE;
    };
    let mut out = OrderSet::NONE;
    for order in rig.grating.orders().first_orders() {
        if let Ok(cols) = model.columns(p, z, order, grid) {
            if order_columns_valid(&cols, q0[0], order, rig.projector.width) {
                out.insert(order);
            }
        }
    }
    out
}

pub(crate) fn order_columns_valid(cols: &[f64], q0: f64, order: Order, width: u32) -> bool {
    cols.iter().all(|&q| {
        let on_projector = q >= -0.5 && q < width as f64 - 0.5;
        let side = match order {
            Order::Plus => q > q0,
            Order::Minus => q < q0,
            Order::Zero => true,
        };
        on_projector && side
    })
}

/// Scanline index whose line lights column `q`: among the lines covering the
/// nearest projector column, the one whose center is closest to `q` (ties to
/// the smaller index).
pub fn px2index(q: f64, spec: &ScanlineSpec) -> Result<usize> {
    let col = nearest_index(q);
    let range = spec.covering(col);
    if range.is_empty() {
        return Err(Error::Coverage(q));
    }
    let mut best = range.start;
    let mut best_d = f64::INFINITY;
    for i in range {
        let d = math::abs(spec.center(i) - q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

/// Correspondence samples computed with the exact grating solver at every
/// lattice node, knot, depth and active first order. Points the solver cannot
/// reach are skipped; columns beyond the projector edge are kept.
pub fn exact_samples(rig: &Rig, lattice: &PixelLattice, knots: &[f64], depths: &[f64]) -> Vec<CorrespondenceSample> {
    let nodes: Vec<[f64; 2]> = lattice.nodes().collect();
    let orders: Vec<Order> = rig.grating.orders().first_orders().collect();
    let per_node = par::map_indices(nodes.len(), |i| {
        let p = nodes[i];
        let mut out = Vec::new();
        for &order in &orders {
            for &nm in knots {
                for &z in depths {
                    let Ok(x) = rig.camera.unproject(p, z) else { continue };
                    if let Ok(s) = solve_grating_point(&x, rig, order, nm) {
                        out.push(CorrespondenceSample { pixel: p, depth_mm: z, order, wavelength_nm: nm, column: s.pixel[0] });
                    }
                }
            }
        }
        out
    });
    per_node.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const DEPTHS: [f64; 6] = [500.0, 600.0, 700.0, 800.0, 900.0, 1000.0];

    #[test]
    fn zero_order_disparity_and_consistency() {
        let rig = Rig::demo();
        let q = zero_order([32.0, 32.0], 800.0, &rig).unwrap();
        assert_relative_eq!(q[0], 320.0, epsilon = 1e-9);
        assert_relative_eq!(q[1], 180.0, epsilon = 1e-9);
        let q2 = zero_order([32.0, 32.0], 600.0, &rig).unwrap();
        assert_relative_eq!(q[0] - q2[0], -800.0 * 150.0 * (1.0 / 800.0 - 1.0 / 600.0), epsilon = 1e-9);

        let proto = Rig::prototype();
        let x = proto.camera.unproject([100.0, 40.0], 650.0).unwrap();
        let s = solve_grating_point(&x, &proto, Order::Zero, 430.0).unwrap();
        let z = zero_order([100.0, 40.0], 650.0, &proto).unwrap();
        assert!((s.pixel[0] - z[0]).abs() < 1e-6);
    }

    #[test]
    fn fit_recovers_exact_law() {
        let law = PowerLaw { alpha: 5000.0, beta: -1.0, gamma: 100.0 };
        let q: Vec<f64> = DEPTHS.iter().map(|&z| law.eval(z)).collect();
        let f = fit_power_law(&DEPTHS, &q).unwrap();
        assert_relative_eq!(f.law.alpha, 5000.0, max_relative = 1e-6);
        assert_relative_eq!(f.law.beta, -1.0, max_relative = 1e-6);
        assert_relative_eq!(f.law.gamma, 100.0, max_relative = 1e-6);
        assert!(f.rms < 1e-9);
    }

    #[test]
    fn fit_constant_is_degenerate() {
        let f = fit_power_law(&DEPTHS, &[42.0; 6]).unwrap();
        assert_eq!(f.law.alpha, 0.0);
        assert_eq!(f.law.gamma, 42.0);
        assert_eq!(f.rms, 0.0);
    }

    #[test]
    fn fit_noise_residual_within_three_sigma() {
        let law = PowerLaw { alpha: -120000.0, beta: -1.05, gamma: 450.0 };
        let noise = Normal::new(0.0, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q: Vec<f64> = DEPTHS.iter().map(|&z| law.eval(z) + noise.sample(&mut rng)).collect();
            let f = match fit_power_law(&DEPTHS, &q) {
                Ok(f) => f,
                Err(Error::FitFailed { best }) => best,
                Err(e) => panic!("{e}"),
            };
            assert!(f.rms <= 0.6, "rms {}", f.rms);
            for (z, q) in DEPTHS.iter().zip(&q) {
                assert!((f.law.eval(*z) - q).abs() <= f.rms * (DEPTHS.len() as f64).sqrt() + 1e-9);
            }
        }
    }

    #[test]
    fn fit_rejects_too_few_depths() {
        assert!(fit_power_law(&[500.0, 600.0, 700.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_power_law(&[500.0, 500.0, 600.0, 700.0], &[1.0, 1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn px2index_examples() {
        let spec = ScanlineSpec::new(640, 5, 2).unwrap();
        assert_eq!(px2index(0.0, &spec).unwrap(), 0);
        assert_eq!(px2index(4.0, &spec).unwrap(), 1);
        assert_eq!(px2index(3.0, &spec).unwrap(), 0);
        assert_eq!(spec.count() - 1, 317);
        assert_eq!(px2index(638.0, &spec).unwrap(), 317);
        assert!(matches!(px2index(639.0, &spec), Err(Error::Coverage(_))));
        for i in 0..spec.count() {
            assert_eq!(px2index(spec.center(i), &spec).unwrap(), i);
        }
    }

    fn demo_model() -> (Rig, CorrespondenceModel) {
        let rig = Rig::demo();
        let lattice = PixelLattice::spanning(64, 64, 5, 5).unwrap();
        let knots = [430.0, 480.0, 530.0, 580.0, 630.0, 660.0];
        let depths = [600.0, 700.0, 800.0, 900.0, 1000.0];
        let samples = exact_samples(&rig, &lattice, &knots, &depths);
        let model = CorrespondenceModel::fit(&samples, lattice, &knots, 640).unwrap();
        (rig, model)
    }

    #[test]
    fn query_reproduces_knots_and_is_linear_in_wavelength() {
        let (rig, model) = demo_model();
        let p = model.lattice().node(2, 3);
        for &z in model.depths() {
            let x = rig.camera.unproject(p, z).unwrap();
            let exact = solve_grating_point(&x, &rig, Order::Plus, 530.0).unwrap().pixel[0];
            let fitted = model.fit_at(Order::Plus, 2, 2, 3).unwrap();
            let q = model.query(p, z, Order::Plus, 530.0).unwrap();
            assert!((q - fitted.law.eval(z)).abs() < 1e-6);
            assert!((q - exact).abs() <= 3.0 * fitted.rms + 1e-9);
        }
        let a = model.query([10.3, 40.7], 750.0, Order::Minus, 480.0).unwrap();
        let b = model.query([10.3, 40.7], 750.0, Order::Minus, 530.0).unwrap();
        let mid = model.query([10.3, 40.7], 750.0, Order::Minus, 505.0).unwrap();
        assert_relative_eq!(mid, 0.5 * (a + b), epsilon = 1e-9);
        assert!(matches!(model.query(p, 750.0, Order::Zero, 500.0), Err(Error::UnsupportedOrder(0))));
        assert!(model.query(p, 5000.0, Order::Plus, 500.0).is_err());
        assert!(model.query([200.0, 10.0], 800.0, Order::Plus, 500.0).is_err());
        assert!(model.query_flagged([-3.0, 10.0], 800.0, Order::Plus, 500.0).unwrap().extrapolated);
    }

    #[test]
    fn table_matches_direct_evaluation_on_nodes() {
        let (_, model) = demo_model();
        let tabled = model.clone().with_depth_table(1.0).unwrap();
        let p = model.lattice().node(1, 1);
        for z in [600.0, 700.0, 812.0] {
            let a = model.query(p, z, Order::Plus, 580.0).unwrap();
            let b = tabled.query(p, z, Order::Plus, 580.0).unwrap();
            assert!((a - b).abs() < 1e-6);
        }
        let a = model.query(p, 812.5, Order::Plus, 580.0).unwrap();
        let b = tabled.query(p, 812.5, Order::Plus, 580.0).unwrap();
        assert!((a - b).abs() < 1e-3);
    }

    #[test]
    fn surrogate_tracks_oracle_on_demo_rig() {
        let (rig, model) = demo_model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let p = [rng.random_range(0.0..63.0), rng.random_range(0.0..63.0)];
            let z = rng.random_range(600.0..1000.0);
            let nm = rng.random_range(430.0..660.0);
            let order = if rng.random_bool(0.5) { Order::Plus } else { Order::Minus };
            let x = rig.camera.unproject(p, z).unwrap();
            let exact = solve_grating_point(&x, &rig, order, nm).unwrap().pixel[0];
            worst = worst.max((model.query(p, z, order, nm).unwrap() - exact).abs());
        }
        assert!(worst < 1.0, "worst {worst}");
    }

    #[test]
    fn valid_orders_near_edges() {
        let (rig, model) = demo_model();
        let grid = WavelengthGrid::standard();
        let center = valid_orders([32.0, 32.0], 800.0, &model, &rig, &grid);
        assert_eq!(center, OrderSet::BOTH);
        let near = valid_orders([63.0, 32.0], 1000.0, &model, &rig, &grid);
        assert!(!near.plus && near.minus);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn query_monotone_and_displaced(px in 0.0..63.0f64, py in 0.0..63.0f64, z in 600.0..1000.0f64) {
            let (rig, model) = demo_model_cached();
            let grid = WavelengthGrid::standard();
            let q0 = zero_order([px, py], z, rig).unwrap()[0];
            let plus = model.columns([px, py], z, Order::Plus, &grid).unwrap();
            let minus = model.columns([px, py], z, Order::Minus, &grid).unwrap();
            prop_assert!(plus.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(minus.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(plus.iter().all(|&q| q != q0) && minus.iter().all(|&q| q != q0));
        }
    }

    fn demo_model_cached() -> &'static (Rig, CorrespondenceModel) {
        static CELL: std::sync::OnceLock<(Rig, CorrespondenceModel)> = std::sync::OnceLock::new();
        CELL.get_or_init(demo_model)
    }
}
