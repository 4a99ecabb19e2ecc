//! Quadratic optimal transport on fibers and the fibered metric
//! `W^L(mu, nu)^2 = int_T W_2(mu^x, nu^x)^2 dx`.
//!
//! Each fiber is represented by its quantile function. For cell-wise constant
//! densities the quantile function is piecewise linear, for atoms it is
//! piecewise constant, so `int_0^1 |F_a^{-1} - F_b^{-1}|^2 du` is evaluated
//! exactly on the merged breakpoints.

use rayon::prelude::*;

use crate::curve::MeasureCurve;
use crate::error::{Error, Result};
use crate::grid::ThetaGrid;
use crate::measure::{DiscreteFiber, FiberMeasure, GridMeasure, DYNAMICS_TOL};

/// Density below which a cell is treated as empty.
pub const AC_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    u0: f64,
    u1: f64,
    v0: f64,
    v1: f64,
}

impl Segment {
    fn at(&self, u: f64) -> f64 {
        let w = self.u1 - self.u0;
        if w <= 0.0 {
            return self.v0;
        }
        let s = ((u - self.u0) / w).clamp(0.0, 1.0);
        self.v0 + (self.v1 - self.v0) * s
    }
}

/// Piecewise-linear, nondecreasing quantile function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFunction {
    segs: Vec<Segment>,
}

impl QuantileFunction {
    /// Builds the quantile function of a sequence of `(v0, v1, mass)` pieces
    /// listed in increasing `v`; each piece spreads its mass uniformly over
    /// `[v0, v1]` (a point mass when `v0 == v1`).
    pub fn from_pieces(pieces: impl IntoIterator<Item = (f64, f64, f64)>) -> Result<Self> {
        let pieces: Vec<_> = pieces.into_iter().filter(|p| p.2 > 0.0).collect();
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        if pieces.is_empty() || (total - 1.0).abs() > DYNAMICS_TOL {
            return Err(Error::NotNormalized {
                index: 0,
                mass: total,
            });
        }
        let mut segs = Vec::with_capacity(pieces.len());
        let mut cum = 0.0;
        let mut last_v = f64::NEG_INFINITY;
        for (k, &(v0, v1, m)) in pieces.iter().enumerate() {
            if v1 < v0 || v0 < last_v - 1e-12 {
                return Err(Error::InvalidParameter(
                    "quantile pieces must be ordered".into(),
                ));
            }
            last_v = v1;
            let u0 = cum / total;
            cum += m;
            let u1 = if k + 1 == pieces.len() { 1.0 } else { cum / total };
            segs.push(Segment { u0, u1, v0, v1 });
        }
        Ok(Self { segs })
    }

    /// Inverse CDF of a cell-wise constant density on `theta`.
    pub fn from_cells(theta: &ThetaGrid, weights: &[f64]) -> Result<Self> {
        let h = theta.dtheta();
        Self::from_pieces(
            weights
                .iter()
                .enumerate()
                .map(|(j, &w)| (theta.edge(j), theta.edge(j + 1), w * h)),
        )
    }

    pub fn from_atoms(atoms: &[(f64, f64)]) -> Result<Self> {
        let mut sorted = atoms.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::from_pieces(sorted.into_iter().map(|(t, m)| (t, t, m)))
    }

    /// Left-continuous evaluation `inf { theta : F(theta) >= u }`.
    pub fn eval(&self, u: f64) -> f64 {
        let k = self.segs.partition_point(|s| s.u1 < u);
        self.segs[k.min(self.segs.len() - 1)].at(u)
    }

    /// Endpoint values of the affine piece covering `[ua, ub]`, which must lie
    /// inside a single segment.
    fn affine_values(&self, ua: f64, ub: f64) -> (f64, f64) {
        let um = 0.5 * (ua + ub);
        let k = self.segs.partition_point(|s| s.u1 < um).min(self.segs.len() - 1);
        let s = self.segs[k];
        let w = s.u1 - s.u0;
        if w <= 0.0 {
            return (s.v0, s.v0);
        }
        let f = |u: f64| s.v0 + (s.v1 - s.v0) * (u - s.u0) / w;
        (f(ua), f(ub))
    }

    /// Values at the `m` equispaced nodes `(k + 1/2) / m`.
    pub fn sample(&self, m: usize) -> Vec<f64> {
        (0..m)
            .map(|k| self.eval((k as f64 + 0.5) / m as f64))
            .collect()
    }

    /// Breakpoints in `u` including 0 and 1.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.segs.iter().map(|s| s.u0).collect();
        b.push(1.0);
        b
    }

    pub fn mean(&self) -> f64 {
        self.segs
            .iter()
            .map(|s| (s.u1 - s.u0) * 0.5 * (s.v0 + s.v1))
            .sum()
    }

    /// Pointwise combination `(1 - t) self + t other` on merged breakpoints.
    pub fn interpolate(&self, other: &Self, t: f64) -> Self {
        let mut segs = Vec::new();
        merge(self, other, |u0, u1, a0, a1, b0, b1| {
            segs.push(Segment {
                u0,
                u1,
                v0: (1.0 - t) * a0 + t * b0,
                v1: (1.0 - t) * a1 + t * b1,
            });
        });
        Self { segs }
    }

    /// `(v0, v1, mass)` pieces of the underlying measure.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.segs.iter().map(|s| (s.v0, s.v1, s.u1 - s.u0))
    }
}

/// Walks the common refinement of two quantile functions, calling
/// `f(u0, u1, a(u0), a(u1), b(u0), b(u1))` on every nonempty piece.
fn merge(
    a: &QuantileFunction,
    b: &QuantileFunction,
    mut f: impl FnMut(f64, f64, f64, f64, f64, f64),
) {
    let (mut ia, mut ib) = (0, 0);
    let mut u = 0.0;
    while ia < a.segs.len() && ib < b.segs.len() {
        let (sa, sb) = (a.segs[ia], b.segs[ib]);
        let end = sa.u1.min(sb.u1);
        if end > u {
            f(u, end, sa.at(u), sa.at(end), sb.at(u), sb.at(end));
            u = end;
        }
        if sa.u1 <= end {
            ia += 1;
        }
        if sb.u1 <= end {
            ib += 1;
        }
    }
}

/// Exact `W_2^2` between two quantile functions.
pub fn w2_squared(a: &QuantileFunction, b: &QuantileFunction) -> f64 {
    let mut acc = 0.0;
    merge(a, b, |u0, u1, a0, a1, b0, b1| {
        let (d0, d1) = (a0 - b0, a1 - b1);
        acc += (u1 - u0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    });
    acc
}

/// Anything with a one-dimensional quantile representation.
pub trait Quantile {
    fn quantile(&self) -> Result<QuantileFunction>;
}

impl Quantile for FiberMeasure {
    fn quantile(&self) -> Result<QuantileFunction> {
        QuantileFunction::from_cells(self.theta(), self.weights())
    }
}

impl Quantile for DiscreteFiber {
    fn quantile(&self) -> Result<QuantileFunction> {
        QuantileFunction::from_atoms(self.atoms())
    }
}

impl Quantile for QuantileFunction {
    fn quantile(&self) -> Result<QuantileFunction> {
        Ok(self.clone())
    }
}

/// `W_2` between two fibers (densities or atoms, in any combination).
pub fn w2_fiber(a: &impl Quantile, b: &impl Quantile) -> Result<f64> {
    Ok(w2_squared(&a.quantile()?, &b.quantile()?).max(0.0).sqrt())
}

/// Quantile functions of every fiber of `mu`.
pub fn fiber_quantiles(mu: &GridMeasure) -> Result<Vec<QuantileFunction>> {
    let theta = mu.grid().theta;
    (0..mu.grid().n_x())
        .into_par_iter()
        .map(|i| {
            QuantileFunction::from_cells(&theta, mu.row(i)).map_err(|e| match e {
                Error::NotNormalized { mass, .. } => Error::NotNormalized { index: i, mass },
                e => e,
            })
        })
        .collect()
}

/// `W^L` between two families of fibers over equal-width torus intervals.
pub fn wl_distance_fibers(a: &[QuantileFunction], b: &[QuantileFunction]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::GridMismatch(format!(
            "{} fibers vs {} fibers",
            a.len(),
            b.len()
        )));
    }
    let parts: Vec<f64> = a
        .par_iter()
        .zip(b.par_iter())
        .map(|(x, y)| w2_squared(x, y))
        .collect();
    let dx = 1.0 / a.len() as f64;
    Ok((parts.iter().sum::<f64>() * dx).max(0.0).sqrt())
}

/// The fibered Wasserstein distance between two grid measures.
pub fn wl_distance(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    mu.same_grid(nu)?;
    wl_distance_fibers(&fiber_quantiles(mu)?, &fiber_quantiles(nu)?)
}

/// Monotone transport map of one fiber, `T = F_nu^{-1} o F_mu`.
#[derive(Debug, Clone)]
pub struct FiberMap {
    /// `T(theta_j)` at cell centres.
    pub values: Vec<f64>,
    theta: ThetaGrid,
    cdf_edges: Vec<f64>,
    target: QuantileFunction,
}

impl FiberMap {
    /// Evaluates the map anywhere in the spin domain.
    pub fn apply(&self, theta: f64) -> f64 {
        let j = self.theta.cell_of(theta);
        let s = ((theta - self.theta.edge(j)) / self.theta.dtheta()).clamp(0.0, 1.0);
        let u = self.cdf_edges[j] + s * (self.cdf_edges[j + 1] - self.cdf_edges[j]);
        self.target.eval(u)
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }

    /// `int |theta - T(theta)|^2 dmu^x`, integrated cell by cell in `theta`.
    fn squared_displacement(&self, weights: &[f64]) -> f64 {
        let tb = self.target.breakpoints();
        let mut acc = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            let (c0, c1) = (self.cdf_edges[j], self.cdf_edges[j + 1]);
            if w <= 0.0 || c1 <= c0 {
                continue;
            }
            let (e0, e1) = (self.theta.edge(j), self.theta.edge(j + 1));
            // theta(u) is affine on [c0, c1]; split at target breakpoints
            let mut cuts = vec![c0];
            cuts.extend(tb.iter().copied().filter(|&u| u > c0 && u < c1));
            cuts.push(c1);
            for k in 0..cuts.len() - 1 {
                let (ua, ub) = (cuts[k], cuts[k + 1]);
                let ta = e0 + (e1 - e0) * (ua - c0) / (c1 - c0);
                let tb_ = e0 + (e1 - e0) * (ub - c0) / (c1 - c0);
                let (ya, yb) = self.target.affine_values(ua, ub);
                let (da, db) = (ta - ya, tb_ - yb);
                acc += w * (tb_ - ta) * (da * da + da * db + db * db) / 3.0;
            }
        }
        acc
    }
}

/// Per-site monotone maps realizing `W^L(mu, nu)`.
#[derive(Debug, Clone)]
pub struct LOptimalMap {
    pub maps: Vec<FiberMap>,
}

impl LOptimalMap {
    /// `|| p^2 - T ||_{L^2(mu)}`.
    pub fn displacement_norm(&self, mu: &GridMeasure) -> f64 {
        let dx = mu.grid().dx();
        let s: f64 = self
            .maps
            .iter()
            .enumerate()
            .map(|(i, m)| m.squared_displacement(mu.row(i)))
            .sum();
        (s * dx).max(0.0).sqrt()
    }

    pub fn is_monotone(&self) -> bool {
        self.maps.iter().all(FiberMap::is_monotone)
    }
}

fn check_ac(mu: &GridMeasure) -> Result<()> {
    for (i, row) in mu.rows().enumerate() {
        if row.iter().all(|&r| r <= AC_THRESHOLD) {
            return Err(Error::DegenerateFiber { index: i });
        }
    }
    Ok(())
}

/// The L-optimal map from `mu` to `nu`.
pub fn l_optimal_map(mu: &GridMeasure, nu: &GridMeasure) -> Result<LOptimalMap> {
    mu.same_grid(nu)?;
    check_ac(mu)?;
    let theta = mu.grid().theta;
    let h = theta.dtheta();
    let targets = fiber_quantiles(nu)?;
    let maps = targets
        .into_iter()
        .enumerate()
        .map(|(i, target)| {
            let row = mu.row(i);
            let total: f64 = row.iter().sum::<f64>() * h;
            let mut cdf_edges = Vec::with_capacity(row.len() + 1);
            let mut cum = 0.0;
            cdf_edges.push(0.0);
            for &w in row {
                cum += w * h;
                cdf_edges.push((cum / total).min(1.0));
            }
            let values = (0..row.len())
                .map(|j| target.eval(0.5 * (cdf_edges[j] + cdf_edges[j + 1])))
                .collect();
            FiberMap {
                values,
                theta,
                cdf_edges,
                target,
            }
        })
        .collect();
    Ok(LOptimalMap { maps })
}

/// Deposits `(v0, v1, mass)` pieces onto the cells of `theta` in proportion
/// to overlap; returns a density. Mass outside the domain goes to the end cells.
pub fn rebin(theta: &ThetaGrid, pieces: impl IntoIterator<Item = (f64, f64, f64)>) -> Vec<f64> {
    let n = theta.len();
    let h = theta.dtheta();
    let mut mass = vec![0.0; n];
    for (v0, v1, m) in pieces {
        if m <= 0.0 {
            continue;
        }
        let (a, b) = (v0.max(theta.min()), v1.min(theta.max()));
        if b <= a {
            let j = theta.cell_of(0.5 * (v0 + v1));
            mass[j] += m;
            continue;
        }
        let width = v1 - v0;
        // pieces clipped by the walls keep their clipped-off mass at the wall
        let left_out = (a - v0).max(0.0) / width * m;
        let right_out = (v1 - b).max(0.0) / width * m;
        mass[0] += left_out;
        mass[n - 1] += right_out;
        let (ja, jb) = (theta.cell_of(a), theta.cell_of(b));
        for (j, slot) in mass.iter_mut().enumerate().take(jb + 1).skip(ja) {
            let lo = theta.edge(j).max(a);
            let hi = theta.edge(j + 1).min(b);
            if hi > lo {
                *slot += (hi - lo) / width * m;
            }
        }
    }
    mass.into_iter().map(|m| m / h).collect()
}

/// Displacement interpolation `((1 - t) Id + t T)_# mu0`, re-binned to the grid.
pub fn geodesic(mu0: &GridMeasure, mu1: &GridMeasure, t: f64) -> Result<GridMeasure> {
    mu0.same_grid(mu1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, 1]")));
    }
    check_ac(mu0)?;
    let (q0, q1) = (fiber_quantiles(mu0)?, fiber_quantiles(mu1)?);
    let theta = mu0.grid().theta;
    let rows: Vec<Vec<f64>> = q0
        .par_iter()
        .zip(q1.par_iter())
        .map(|(a, b)| rebin(&theta, a.interpolate(b, t).pieces()))
        .collect();
    GridMeasure::with_tolerance(*mu0.grid(), rows.concat(), DYNAMICS_TOL)
}

/// Result of [`metric_derivative`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricDerivative {
    pub value: f64,
    /// True when the index sits at a curve end and a one-sided quotient was used.
    pub one_sided: bool,
}

/// Speed `|mu'|(t_k)` of a sampled curve by a `W^L` difference quotient.
pub fn metric_derivative(curve: &MeasureCurve, k: usize) -> Result<MetricDerivative> {
    let n = curve.len();
    if n < 2 {
        return Err(Error::InvalidParameter("curve needs two samples".into()));
    }
    if k >= n {
        return Err(Error::IndexOutOfRange { index: k, n_x: n });
    }
    let s = curve.states();
    let t = curve.times();
    let (a, b, one_sided) = if k == 0 {
        (0, 1, true)
    } else if k == n - 1 {
        (n - 2, n - 1, true)
    } else {
        (k - 1, k + 1, false)
    };
    let value = wl_distance(&s[a], &s[b])? / (t[b] - t[a]);
    Ok(MetricDerivative { value, one_sided })
}
