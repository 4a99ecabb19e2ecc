//! Free energy, relative entropy, magnetization and slope on grid measures,
//! plus the microscopic Hamiltonian and its product-measure functionals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ThetaGrid};
use crate::measure::{FiberMeasure, GridMeasure};
use crate::model::ModelParams;
use crate::particles::ParticleState;

/// Densities below this are treated as zero in logarithms and quotients.
pub const RHO_FLOOR: f64 = 1e-14;

/// `sum rho log rho dx dtheta`, with `0 log 0 = 0`.
pub fn entropy(mu: &GridMeasure) -> f64 {
    let w = mu.grid().dx() * mu.grid().dtheta();
    mu.density()
        .iter()
        .map(|&r| if r > 0.0 { r * r.ln() } else { 0.0 })
        .sum::<f64>()
        * w
}

pub fn potential_energy(mu: &GridMeasure, p: &ModelParams) -> f64 {
    mu.integrate(|_, t| p.psi(t))
}

/// `m(x_i) = sum_k J(x_i - x_k) mean_k dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetizationField {
    pub values: Vec<f64>,
}

pub fn magnetization(mu: &GridMeasure, p: &ModelParams) -> MagnetizationField {
    MagnetizationField {
        values: convolve(&p.kernel().table(mu.grid().n_x()), &mu.fiber_means()),
    }
}

/// Circulant convolution `(1/n) sum_k table[(i - k) mod n] v_k`.
pub(crate) fn convolve(table: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    if table.iter().all(|&t| t == 0.0) {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            (0..n)
                .map(|k| table[(i + n - k) % n] * v[k])
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// `-(1/2) sum_i mean_i m(x_i) dx`.
pub fn interaction_energy(mu: &GridMeasure, p: &ModelParams) -> f64 {
    let m = magnetization(mu, p);
    -0.5 * mu
        .fiber_means()
        .iter()
        .zip(&m.values)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * mu.grid().dx()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyParts {
    pub entropy: f64,
    pub potential: f64,
    pub interaction: f64,
    pub total: f64,
}

pub fn free_energy_parts(mu: &GridMeasure, p: &ModelParams) -> FreeEnergyParts {
    let entropy = entropy(mu);
    let potential = potential_energy(mu, p);
    let interaction = interaction_energy(mu, p);
    FreeEnergyParts {
        entropy,
        potential,
        interaction,
        total: entropy + potential + interaction,
    }
}

pub fn free_energy(mu: &GridMeasure, p: &ModelParams) -> f64 {
    free_energy_parts(mu, p).total
}

/// `log sum exp(-s Psi) dtheta` on the grid.
pub fn log_partition(theta: &ThetaGrid, p: &ModelParams, s: f64) -> f64 {
    let vals: Vec<f64> = theta.centers().iter().map(|&t| -s * p.psi(t)).collect();
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + (vals.iter().map(|v| (v - top).exp()).sum::<f64>() * theta.dtheta()).ln()
}

/// The grid Gibbs fiber `exp(-Psi) / Z`.
pub fn gibbs_fiber(theta: ThetaGrid, p: &ModelParams) -> Result<FiberMeasure> {
    let lz = log_partition(&theta, p, 1.0);
    let w = theta.centers().iter().map(|&t| (-p.psi(t) - lz).exp()).collect();
    FiberMeasure::new(theta, w)
}

/// Every fiber equal to the grid Gibbs fiber (the equilibrium when `J = 0`).
pub fn gibbs_measure(grid: Grid, p: &ModelParams) -> Result<GridMeasure> {
    GridMeasure::constant_in_x(grid.n_x(), &gibbs_fiber(grid.theta, p)?)
}

/// Fibers `exp(-Psi + a cos(2 pi x) theta - b theta^2 / 2)`, normalized per site.
pub fn tilted_gibbs(grid: Grid, p: &ModelParams, amplitude: f64, curvature: f64) -> Result<GridMeasure> {
    let centers = grid.theta.centers();
    let mut raw = Vec::with_capacity(grid.cells());
    for i in 0..grid.n_x() {
        let h = amplitude * (2.0 * std::f64::consts::PI * grid.torus.site(i)).cos();
        let e: Vec<f64> = centers.iter().map(|&t| -p.psi(t) + h * t - 0.5 * curvature * t * t).collect();
        let top = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        raw.extend(e.iter().map(|v| (v - top).exp()));
    }
    GridMeasure::normalize_fibers(grid, raw)
}

/// Constant `C` with `F(mu) >= (1/2) int (C_Psi theta^{2l} + (C'_Psi - ||J||) theta^2) dmu - C`.
///
/// Per fiber, `int rho log rho + (1/2) int Psi rho >= -log sum exp(-Psi/2)`;
/// the interaction is at least `-(1/2) ||J|| int theta^2 dmu`; the rest is the
/// growth bound on `Psi / 2`. All three steps hold exactly for grid sums.
pub fn lower_bound_constant(theta: &ThetaGrid, p: &ModelParams) -> f64 {
    log_partition(theta, p, 0.5) + 0.5 * p.constants().c2_psi
}

/// The left side of the lower bound, without the constant.
pub fn lower_bound_integrand(mu: &GridMeasure, p: &ModelParams) -> f64 {
    let c = p.constants();
    let jn = p.kernel().sup_norm();
    let e = 2 * c.ell as i32;
    0.5 * mu.integrate(|_, t| c.c_psi * t.powi(e) + (c.c1_psi - jn) * t * t)
}

/// Relative entropy `sum rho log(rho / reference) dx dtheta` against a
/// possibly unnormalized reference density on the same cells; `+inf` when
/// `rho > 0` somewhere the reference vanishes.
pub fn relative_entropy(mu: &GridMeasure, reference: &[f64]) -> f64 {
    if reference.len() != mu.density().len() {
        return f64::INFINITY;
    }
    let w = mu.grid().dx() * mu.grid().dtheta();
    let mut acc = 0.0;
    for (&r, &q) in mu.density().iter().zip(reference) {
        if r > 0.0 {
            if !(q > 0.0) {
                return f64::INFINITY;
            }
            acc += r * (r / q).ln();
        }
    }
    acc * w
}

/// `H(mu | nu)` for two grid measures.
pub fn relative_entropy_to(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    mu.same_grid(nu)?;
    Ok(relative_entropy(mu, nu.density()))
}

/// `d rho / d theta` at cell centres: centred inside, one-sided second order
/// at the two ends.
pub(crate) fn d_theta(row: &[f64], h: f64, out: &mut [f64]) {
    let n = row.len();
    if n == 2 {
        let d = (row[1] - row[0]) / h;
        out[0] = d;
        out[1] = d;
        return;
    }
    out[0] = (-3.0 * row[0] + 4.0 * row[1] - row[2]) / (2.0 * h);
    for j in 1..n - 1 {
        out[j] = (row[j + 1] - row[j - 1]) / (2.0 * h);
    }
    out[n - 1] = (3.0 * row[n - 1] - 4.0 * row[n - 2] + row[n - 3]) / (2.0 * h);
}

/// Negative adjoint of [`d_theta`], so that
/// `sum rho (d_theta_adj beta) = -sum beta (d_theta rho)` exactly.
pub(crate) fn d_theta_adj(beta: &[f64], h: f64, out: &mut [f64]) {
    let n = beta.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    if n == 2 {
        let s = (beta[0] + beta[1]) / h;
        out[0] = s;
        out[1] = -s;
        return;
    }
    // out = -D^T beta with D as in d_theta
    let c = 1.0 / (2.0 * h);
    let mut add = |row: usize, col: usize, coef: f64| out[col] -= coef * c * beta[row];
    add(0, 0, -3.0);
    add(0, 1, 4.0);
    add(0, 2, -1.0);
    for j in 1..n - 1 {
        add(j, j + 1, 1.0);
        add(j, j - 1, -1.0);
    }
    add(n - 1, n - 1, 3.0);
    add(n - 1, n - 2, -4.0);
    add(n - 1, n - 3, 1.0);
}

/// `w = d_theta rho / rho + Psi' - m` per cell, masked where `rho < RHO_FLOOR`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeField {
    grid: Grid,
    pub w: Vec<f64>,
    pub mask: Vec<bool>,
    /// `mu`-mass of the masked cells.
    pub masked_mass: f64,
    /// `sum rho w^2 dx dtheta` over unmasked cells.
    pub norm_sq: f64,
}

impl SlopeField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Tangent velocity `v = -w` (zero on masked cells).
    pub fn velocity(&self) -> Vec<f64> {
        self.w.iter().map(|w| -w).collect()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }
}

pub fn slope_field(mu: &GridMeasure, p: &ModelParams) -> SlopeField {
    let g = *mu.grid();
    let (nt, h) = (g.n_theta(), g.dtheta());
    let m = magnetization(mu, p);
    let dpsi: Vec<f64> = g.theta.centers().iter().map(|&t| p.dpsi(t)).collect();
    let mut w = vec![0.0; g.cells()];
    let mut mask = vec![false; g.cells()];
    w.par_chunks_mut(nt)
        .zip(mask.par_chunks_mut(nt))
        .enumerate()
        .for_each(|(i, (wr, mr))| {
            let row = mu.row(i);
            let mut d = vec![0.0; nt];
            d_theta(row, h, &mut d);
            for j in 0..nt {
                if row[j] < RHO_FLOOR {
                    mr[j] = true;
                    wr[j] = 0.0;
                } else {
                    wr[j] = d[j] / row[j] + dpsi[j] - m.values[i];
                }
            }
        });
    let cw = g.dx() * h;
    let rho = mu.density();
    let masked_mass = rho
        .iter()
        .zip(&mask)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r)
        .sum::<f64>()
        * cw;
    let norm_sq = rho.iter().zip(&w).map(|(r, w)| r * w * w).sum::<f64>() * cw;
    SlopeField {
        grid: g,
        w,
        mask,
        masked_mass,
        norm_sq,
    }
}

/// `|dF|(mu) = ||w||_{L^2(mu)}`.
pub fn metric_slope(mu: &GridMeasure, p: &ModelParams) -> f64 {
    slope_field(mu, p).norm()
}

/// A test function `beta` sampled at cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub values: Vec<f64>,
}

impl TestFunction {
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.cells());
        for i in 0..grid.n_x() {
            let x = grid.torus.site(i);
            for t in grid.theta.centers() {
                values.push(f(x, t));
            }
        }
        Self { values }
    }
}

/// Probabilists' Hermite polynomial `He_n`.
pub fn hermite(n: usize, t: f64) -> f64 {
    let (mut a, mut b) = (1.0, t);
    if n == 0 {
        return a;
    }
    for k in 1..n {
        let c = t * b - k as f64 * a;
        a = b;
        b = c;
    }
    b
}

/// `He_n(theta) exp(-theta^2/4)` times `1, cos 2pi x, sin 2pi x, cos 4pi x`
/// for `n = 0..`, truncated to `count` modes.
pub fn hermite_fourier_family(grid: &Grid, count: usize) -> Vec<TestFunction> {
    use std::f64::consts::PI;
    let fourier: [fn(f64) -> f64; 4] = [
        |_| 1.0,
        |x| (2.0 * PI * x).cos(),
        |x| (2.0 * PI * x).sin(),
        |x| (4.0 * PI * x).cos(),
    ];
    (0..count)
        .map(|k| {
            let (n, f) = (k / 4, fourier[k % 4]);
            TestFunction::from_fn(grid, |x, t| hermite(n, t) * (-t * t / 4.0).exp() * f(x))
        })
        .collect()
}

/// The test function equal to the slope field itself.
pub fn slope_test_function(field: &SlopeField) -> TestFunction {
    TestFunction {
        values: field.w.clone(),
    }
}

/// `max_beta |sum rho (beta (Psi' - m) - D beta)| / ||beta||_{L^2(mu)}`
/// over the family, where `D` is the negative adjoint of the spin difference
/// used for `rho`, so summation by parts is exact on the grid.
pub fn variational_slope(mu: &GridMeasure, p: &ModelParams, family: &[TestFunction]) -> Result<f64> {
    let g = mu.grid();
    let (nt, h) = (g.n_theta(), g.dtheta());
    let cw = g.dx() * h;
    let m = magnetization(mu, p);
    let dpsi: Vec<f64> = g.theta.centers().iter().map(|&t| p.dpsi(t)).collect();
    let mut best: Option<f64> = None;
    let mut db = vec![0.0; nt];
    for beta in family {
        if beta.values.len() != g.cells() {
            return Err(Error::GridMismatch("test function size".into()));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..g.n_x() {
            let row = mu.row(i);
            let b = &beta.values[i * nt..(i + 1) * nt];
            d_theta_adj(b, h, &mut db);
            for j in 0..nt {
                num += row[j] * (b[j] * (dpsi[j] - m.values[i]) - db[j]);
                den += row[j] * b[j] * b[j];
            }
        }
        let den = (den * cw).sqrt();
        if den > 0.0 && den.is_finite() {
            let q = (num * cw).abs() / den;
            best = Some(best.map_or(q, |b: f64| b.max(q)));
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("every test function has zero norm".into()))
}

/// `H^N = sum Psi(theta_i) - (1/2N) sum_{i,j} J((i-j)/N) theta_i theta_j`.
///
/// The interaction sign is chosen so that `-grad H^N` is the particle drift.
pub fn hamiltonian(state: &ParticleState, p: &ModelParams) -> f64 {
    let th = state.thetas();
    let n = th.len();
    let table = p.kernel().table(n);
    let conv = convolve(&table, th);
    th.iter().map(|&t| p.psi(t)).sum::<f64>()
        - 0.5 * th.iter().zip(&conv).map(|(a, b)| a * b).sum::<f64>()
}

/// `dH^N / d theta_i = Psi'(theta_i) - (1/N) sum_j J((i-j)/N) theta_j`.
pub fn hamiltonian_gradient(state: &ParticleState, p: &ModelParams) -> Vec<f64> {
    let th = state.thetas();
    let conv = convolve(&p.kernel().table(th.len()), th);
    th.iter().zip(&conv).map(|(&t, c)| p.dpsi(t) - c).collect()
}

/// Product measure `nu_1 x ... x nu_N` on `R^N`, site `k` at `k / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductMeasure {
    sites: Vec<FiberMeasure>,
}

impl ProductMeasure {
    pub fn new(sites: Vec<FiberMeasure>) -> Result<Self> {
        let Some(first) = sites.first() else {
            return Err(Error::InvalidParameter("product of zero sites".into()));
        };
        if sites.iter().any(|s| s.theta() != first.theta()) {
            return Err(Error::GridMismatch("site fibers on different spin grids".into()));
        }
        Ok(Self { sites })
    }

    /// One site per fiber of `mu`.
    pub fn from_fibers(mu: &GridMeasure) -> Self {
        Self {
            sites: (0..mu.grid().n_x()).map(|i| mu.fiber(i).expect("in range")).collect(),
        }
    }

    /// `N` copies of one fiber.
    pub fn iid(fiber: &FiberMeasure, n: usize) -> Result<Self> {
        Self::new(vec![fiber.clone(); n])
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[FiberMeasure] {
        &self.sites
    }

    pub fn theta(&self) -> &ThetaGrid {
        self.sites[0].theta()
    }

    /// The macroscopic measure whose fiber on `[k/N, (k+1)/N)` is `nu_k`.
    pub fn to_grid_measure(&self) -> Result<GridMeasure> {
        let t = self.theta();
        let grid = Grid::new(self.n(), t.min(), t.max(), t.len())?;
        let rho = self.sites.iter().flat_map(|s| s.weights().iter().copied()).collect();
        GridMeasure::with_tolerance(grid, rho, crate::measure::DYNAMICS_TOL)
    }
}

/// `(1/N) H(nu | exp(-H^N) dtheta)` for a product measure, evaluated exactly
/// per site: the diagonal interaction term uses the site second moment.
pub fn micro_free_energy(nu: &ProductMeasure, p: &ModelParams) -> f64 {
    let n = nu.n();
    let nf = n as f64;
    let table = p.kernel().table(n);
    let means: Vec<f64> = nu.sites.iter().map(|s| s.mean()).collect();
    let local: f64 = nu
        .sites
        .iter()
        .map(|s| {
            let h = s.theta().dtheta();
            s.weights()
                .iter()
                .zip(s.theta().centers())
                .map(|(&r, t)| if r > 0.0 { r * (r.ln() + p.psi(t)) } else { 0.0 })
                .sum::<f64>()
                * h
        })
        .sum();
    let mut pair = 0.0;
    for k in 0..n {
        for j in 0..n {
            let jk = table[(k + n - j) % n];
            pair += if j == k {
                jk * nu.sites[k].second_moment()
            } else {
                jk * means[k] * means[j]
            };
        }
    }
    local / nf - pair / (2.0 * nf * nf)
}

/// `(1/N) E |grad log f + grad H^N|^2` for a product density `f`.
///
/// Site `k` sees `a_k(theta) = nu_k'/nu_k + Psi' - J(0) theta / N - (1/N) sum_{j != k} J m_j`
/// plus an independent centred fluctuation of variance
/// `(1/N^2) sum_{j != k} J^2 var_j`.
pub fn micro_slope(nu: &ProductMeasure, p: &ModelParams) -> f64 {
    let n = nu.n();
    let nf = n as f64;
    let table = p.kernel().table(n);
    let means: Vec<f64> = nu.sites.iter().map(|s| s.mean()).collect();
    let vars: Vec<f64> = nu
        .sites
        .iter()
        .zip(&means)
        .map(|(s, m)| s.second_moment() - m * m)
        .collect();
    let theta = *nu.theta();
    let h = theta.dtheta();
    let centers = theta.centers();
    let dpsi: Vec<f64> = centers.iter().map(|&t| p.dpsi(t)).collect();
    let mut total = 0.0;
    let mut d = vec![0.0; theta.len()];
    for k in 0..n {
        let (mut field, mut fluct) = (0.0, 0.0);
        for j in (0..n).filter(|&j| j != k) {
            let jk = table[(k + n - j) % n];
            field += jk * means[j];
            fluct += jk * jk * vars[j];
        }
        field /= nf;
        fluct /= nf * nf;
        let row = nu.sites[k].weights();
        d_theta(row, h, &mut d);
        let mut e = 0.0;
        for j in 0..row.len() {
            if row[j] >= RHO_FLOOR {
                let a = d[j] / row[j] + dpsi[j] - table[0] * centers[j] / nf - field;
                e += row[j] * a * a;
            }
        }
        total += e * h + fluct;
    }
    total / nf
}
