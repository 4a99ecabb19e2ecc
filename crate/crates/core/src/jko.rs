//! Minimizing-movement scheme `mu_n = argmin F(nu) + W^L(mu_{n-1}, nu)^2 / (2 tau)`.
//!
//! Candidates are fiberwise monotone pushforwards of the previous state. Each
//! fiber is stored as a piecewise-linear quantile function on fixed mass
//! nodes `u_0 = 0 < ... < u_M = 1` with positions `q_0 <= ... <= q_M`; the
//! density is `du_k / dq_k` on `[q_k, q_{k+1}]`. The end positions are pinned
//! at the walls of the spin domain. Entropy, transport cost and fiber means
//! are exact on this class. The confinement uses a trapezoid-type potential
//! whose discrete Euler-Lagrange equation is solved exactly by the grid
//! Gibbs state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::MeasureCurve;
use crate::error::{Error, Result};
use crate::functionals::convolve;
use crate::grid::{Grid, ThetaGrid};
use crate::isotonic::isotonic;
use crate::measure::{GridMeasure, DYNAMICS_TOL};
use crate::model::ModelParams;
use crate::transport::{rebin, QuantileFunction};

/// Cells are pooled into blocks of at least this mass.
pub const BLOCK_MASS: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JkoConfig {
    pub tau: f64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    /// Stop when the gradient norm in `L^2(mu)` falls below this.
    #[serde(default = "defaults::grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "defaults::shrink")]
    pub shrink: f64,
    /// Minimum number of quantile nodes per fiber.
    #[serde(default = "defaults::m_q")]
    pub m_q: usize,
}

mod defaults {
    pub fn max_iter() -> usize {
        200
    }
    pub fn grad_tol() -> f64 {
        1e-9
    }
    pub fn shrink() -> f64 {
        0.5
    }
    pub fn m_q() -> usize {
        8
    }
}

impl JkoConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            max_iter: defaults::max_iter(),
            grad_tol: defaults::grad_tol(),
            shrink: defaults::shrink(),
            m_q: defaults::m_q(),
        }
    }

    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        let lm = p.lambda_minus();
        if !(self.tau > 0.0) || (lm > 0.0 && self.tau * lm >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tau = {} must satisfy 0 < tau < 1/lambda^- = {}",
                self.tau,
                if lm > 0.0 { 1.0 / lm } else { f64::INFINITY }
            )));
        }
        if self.m_q < 8 {
            return Err(Error::InvalidParameter(format!("m_q = {} must be >= 8", self.m_q)));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) || self.max_iter == 0 || !(self.grad_tol > 0.0) {
            return Err(Error::InvalidParameter("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

/// One fiber: masses `du` of the `M` pieces and node positions `q` (`M + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct FiberNodes {
    pub du: Vec<f64>,
    pub q: Vec<f64>,
}

impl FiberNodes {
    fn from_row(theta: &ThetaGrid, row: &[f64]) -> Result<Self> {
        let h = theta.dtheta();
        let total: f64 = row.iter().sum::<f64>() * h;
        let mut du = Vec::new();
        let mut q = vec![theta.min()];
        let mut acc = 0.0;
        for (j, &r) in row.iter().enumerate() {
            acc += r * h / total;
            if acc >= BLOCK_MASS {
                du.push(acc);
                q.push(theta.edge(j + 1));
                acc = 0.0;
            }
        }
        if du.is_empty() {
            return Err(Error::DegenerateFiber { index: 0 });
        }
        if acc > 0.0 {
            // remainder joins the last block
            *du.last_mut().expect("nonempty") += acc;
            *q.last_mut().expect("nonempty") = theta.max();
        }
        let last = q.len() - 1;
        q[last] = theta.max();
        Ok(Self { du, q })
    }

    fn weights(&self) -> Vec<f64> {
        // w_k = du_{k-1} + du_k at interior nodes
        (1..self.q.len() - 1).map(|k| self.du[k - 1] + self.du[k]).collect()
    }

    pub fn mean(&self) -> f64 {
        self.du
            .iter()
            .enumerate()
            .map(|(k, d)| d * 0.5 * (self.q[k] + self.q[k + 1]))
            .sum()
    }

    pub fn quantile(&self) -> Result<QuantileFunction> {
        QuantileFunction::from_pieces(self.pieces())
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.du
            .iter()
            .enumerate()
            .map(|(k, &d)| (self.q[k], self.q[k + 1], d))
    }

    fn entropy(&self) -> f64 {
        self.du
            .iter()
            .enumerate()
            .map(|(k, &d)| d * (d / (self.q[k + 1] - self.q[k])).ln())
            .sum()
    }
}

/// Quantile-node state of a whole measure.
#[derive(Debug, Clone, PartialEq)]
pub struct JkoState {
    grid: Grid,
    fibers: Vec<FiberNodes>,
}

impl JkoState {
    pub fn from_measure(mu: &GridMeasure) -> Result<Self> {
        let g = *mu.grid();
        let fibers = (0..g.n_x())
            .map(|i| {
                FiberNodes::from_row(&g.theta, mu.row(i)).map_err(|e| match e {
                    Error::DegenerateFiber { .. } => Error::DegenerateFiber { index: i },
                    e => e,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { grid: g, fibers })
    }

    pub fn fibers(&self) -> &[FiberNodes] {
        &self.fibers
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Re-binned grid density (overlap-proportional deposit).
    pub fn to_measure(&self) -> Result<GridMeasure> {
        let rows: Vec<Vec<f64>> = self
            .fibers
            .par_iter()
            .map(|f| rebin(&self.grid.theta, f.pieces()))
            .collect();
        GridMeasure::with_tolerance(self.grid, rows.concat(), DYNAMICS_TOL)
    }

    pub fn quantiles(&self) -> Result<Vec<QuantileFunction>> {
        self.fibers.iter().map(|f| f.quantile()).collect()
    }

    /// Free energy of the piecewise-uniform state with the exact potential
    /// integral.
    pub fn free_energy(&self, p: &ModelParams) -> f64 {
        let dx = self.grid.dx();
        let local: f64 = self
            .fibers
            .iter()
            .map(|f| {
                f.entropy()
                    + f.pieces()
                        .map(|(a, b, m)| m * integrate(a, b, |s| p.psi(s)) / (b - a))
                        .sum::<f64>()
            })
            .sum::<f64>()
            * dx;
        let means: Vec<f64> = self.fibers.iter().map(|f| f.mean()).collect();
        local + interaction(&means, p, dx)
    }
}

fn interaction(means: &[f64], p: &ModelParams, dx: f64) -> f64 {
    let m = convolve(&p.kernel().table(means.len()), means);
    -0.5 * means.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>() * dx
}

const GL_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Eight-point Gauss-Legendre on `[a, b]`, split into pieces of length <= 0.05.
fn integrate(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let pieces = (((b - a).abs() / 0.05).ceil() as usize).max(1);
    let step = (b - a) / pieces as f64;
    let mut acc = 0.0;
    for k in 0..pieces {
        let (lo, hi) = (a + k as f64 * step, a + (k + 1) as f64 * step);
        let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (x, w) in GL_X.iter().zip(&GL_W) {
            acc += w * r * (f(c - r * x) + f(c + r * x));
        }
    }
    acc
}

/// Fitted confinement: `P = sum_k du_k (A(q_k) + A(q_{k+1}))` with
/// `A'(s) = tanh((Psi(s + h/2) - Psi(s - h/2)) / 2) / h`.
struct Fitted<'a> {
    p: &'a ModelParams,
    h: f64,
}

impl Fitted<'_> {
    fn delta(&self, s: f64) -> f64 {
        self.p.psi(s + 0.5 * self.h) - self.p.psi(s - 0.5 * self.h)
    }

    fn d1(&self, s: f64) -> f64 {
        (0.5 * self.delta(s)).tanh() / self.h
    }

    fn d2(&self, s: f64) -> f64 {
        let t = (0.5 * self.delta(s)).tanh();
        let dd = self.p.dpsi(s + 0.5 * self.h) - self.p.dpsi(s - 0.5 * self.h);
        (1.0 - t * t) * dd / (2.0 * self.h)
    }

    /// `A(b) - A(a)`.
    fn increment(&self, a: f64, b: f64) -> f64 {
        integrate(a, b, |s| self.d1(s))
    }
}

/// Per-fiber part of the objective relative to the previous positions.
fn fiber_objective(f: &FiberNodes, q: &[f64], fit: &Fitted, tau: f64) -> f64 {
    let mut ent = 0.0;
    let mut tr = 0.0;
    for k in 0..f.du.len() {
        let (dq, dq0) = (q[k + 1] - q[k], f.q[k + 1] - f.q[k]);
        ent -= f.du[k] * ((dq - dq0) / dq0).ln_1p();
        let (a, b) = (q[k] - f.q[k], q[k + 1] - f.q[k + 1]);
        tr += f.du[k] * (a * a + a * b + b * b) / 3.0;
    }
    let w = f.weights();
    let pot: f64 = (1..q.len() - 1)
        .map(|k| w[k - 1] * fit.increment(f.q[k], q[k]))
        .sum();
    ent + pot + tr / (2.0 * tau)
}

fn mean_of(du: &[f64], q: &[f64]) -> f64 {
    du.iter()
        .enumerate()
        .map(|(k, d)| d * 0.5 * (q[k] + q[k + 1]))
        .sum()
}

struct Problem<'a> {
    prev: &'a JkoState,
    p: &'a ModelParams,
    fit: Fitted<'a>,
    tau: f64,
    dx: f64,
    table: Vec<f64>,
    base_interaction: f64,
}

impl<'a> Problem<'a> {
    fn new(prev: &'a JkoState, p: &'a ModelParams, tau: f64) -> Self {
        let dx = prev.grid.dx();
        let means: Vec<f64> = prev.fibers.iter().map(|f| f.mean()).collect();
        Self {
            prev,
            p,
            fit: Fitted {
                p,
                h: prev.grid.dtheta(),
            },
            tau,
            dx,
            table: p.kernel().table(prev.fibers.len()),
            base_interaction: interaction(&means, p, dx),
        }
    }

    /// `Phi(q) - Phi(q_prev)`; `+inf` if some spacing is not positive.
    fn objective(&self, qs: &[Vec<f64>]) -> f64 {
        if qs.iter().any(|q| q.windows(2).any(|w| !(w[1] > w[0]))) {
            return f64::INFINITY;
        }
        let local: Vec<f64> = self
            .prev
            .fibers
            .par_iter()
            .zip(qs.par_iter())
            .map(|(f, q)| fiber_objective(f, q, &self.fit, self.tau))
            .collect();
        let means: Vec<f64> = self
            .prev
            .fibers
            .iter()
            .zip(qs)
            .map(|(f, q)| mean_of(&f.du, q))
            .collect();
        local.iter().sum::<f64>() * self.dx + (interaction(&means, self.p, self.dx) - self.base_interaction)
    }

    /// Gradient, tridiagonal Hessian (without the interaction) and node
    /// weights `dx w_k / 2`, all on interior nodes.
    fn derivatives(&self, qs: &[Vec<f64>]) -> Vec<(Vec<f64>, [Vec<f64>; 3], Vec<f64>)> {
        let means: Vec<f64> = self
            .prev
            .fibers
            .iter()
            .zip(qs)
            .map(|(f, q)| mean_of(&f.du, q))
            .collect();
        let field = convolve(&self.table, &means);
        let (dx, c) = (self.dx, 1.0 / (2.0 * self.tau));
        self.prev
            .fibers
            .par_iter()
            .zip(qs.par_iter())
            .zip(field.par_iter())
            .map(|((f, q), &m)| {
                let du = &f.du;
                let d: Vec<f64> = q.iter().zip(&f.q).map(|(a, b)| a - b).collect();
                let n = q.len() - 2;
                let (mut g, mut lo, mut di, mut up, mut om) =
                    (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                for r in 0..n {
                    let k = r + 1;
                    let (dl, dr) = (q[k] - q[k - 1], q[k + 1] - q[k]);
                    let w = du[k - 1] + du[k];
                    let ent = du[k] / dr - du[k - 1] / dl;
                    let tr = du[k - 1] * (d[k - 1] + 2.0 * d[k]) / 3.0 + du[k] * (2.0 * d[k] + d[k + 1]) / 3.0;
                    g[r] = dx * (ent + w * self.fit.d1(q[k]) + c * tr - 0.5 * w * m);
                    di[r] = dx
                        * (du[k] / (dr * dr) + du[k - 1] / (dl * dl) + w * self.fit.d2(q[k]) + c * 2.0 * w / 3.0);
                    if r + 1 < n {
                        up[r] = dx * (-du[k] / (dr * dr) + c * du[k] / 3.0);
                    }
                    if r > 0 {
                        lo[r] = dx * (-du[k - 1] / (dl * dl) + c * du[k - 1] / 3.0);
                    }
                    om[r] = 0.5 * dx * w;
                }
                (g, [lo, di, up], om)
            })
            .collect()
    }
}

/// Diagnostics of one minimizing-movement step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JkoDiag {
    pub n: usize,
    /// `F(nu) + W^L(mu_prev, nu)^2 / (2 tau)` at the output.
    pub objective: f64,
    /// Objective at the input minus objective at the output.
    pub decrease: f64,
    pub grad_norm: f64,
    pub inner_iters: usize,
}

pub const JKO_DIAG_HEADER: &str = "n,objective,decrease,grad_norm,inner_iters";

fn grad_norm(ders: &[(Vec<f64>, [Vec<f64>; 3], Vec<f64>)]) -> f64 {
    ders.iter()
        .flat_map(|(g, _, om)| g.iter().zip(om).map(|(g, o)| if *o > 0.0 { g * g / o } else { 0.0 }))
        .sum::<f64>()
        .sqrt()
}

/// Solves `H p = -g` for a symmetric tridiagonal `H`; falls back to the
/// scaled gradient if a pivot is not positive.
fn newton_direction(g: &[f64], h: &[Vec<f64>; 3], om: &[f64]) -> Vec<f64> {
    let n = g.len();
    let [lo, di, up] = h;
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    for j in 0..n {
        let piv = di[j] - if j > 0 { lo[j] * cp[j - 1] } else { 0.0 };
        if !(piv > 0.0) {
            return g.iter().zip(om).map(|(g, o)| -g / o.max(1e-300)).collect();
        }
        cp[j] = up[j] / piv;
        dp[j] = (-g[j] - if j > 0 { lo[j] * dp[j - 1] } else { 0.0 }) / piv;
    }
    let mut x = vec![0.0; n];
    for j in (0..n).rev() {
        x[j] = dp[j] - if j + 1 < n { cp[j] * x[j + 1] } else { 0.0 };
    }
    x
}

impl JkoState {
    /// One minimizing-movement step by projected Newton iterations with
    /// Armijo backtracking.
    pub fn step(&self, p: &ModelParams, cfg: &JkoConfig, n: usize) -> Result<(JkoState, JkoDiag)> {
        cfg.validate(p)?;
        let nodes = self.fibers.iter().map(|f| f.q.len()).min().unwrap_or(0);
        if nodes < cfg.m_q {
            return Err(Error::InvalidParameter(format!(
                "only {nodes} quantile nodes in some fiber, m_q = {}",
                cfg.m_q
            )));
        }
        let prob = Problem::new(self, p, cfg.tau);
        let mut qs: Vec<Vec<f64>> = self.fibers.iter().map(|f| f.q.clone()).collect();
        let mut phi: f64 = 0.0;
        let mut iters = 0;
        let mut gn = f64::INFINITY;
        while iters < cfg.max_iter {
            let ders = prob.derivatives(&qs);
            gn = grad_norm(&ders);
            if gn < cfg.grad_tol {
                break;
            }
            iters += 1;
            let dirs: Vec<Vec<f64>> = ders
                .par_iter()
                .map(|(g, h, om)| newton_direction(g, h, om))
                .collect();
            let slope: f64 = ders
                .iter()
                .zip(&dirs)
                .map(|((g, _, _), d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            let tiny = -slope <= 1e-15 * phi.abs().max(1e-3);
            let mut alpha = 1.0;
            let accepted = loop {
                let cand = self.candidate(&qs, &dirs, &ders, alpha)?;
                let val = prob.objective(&cand);
                if val.is_finite() && (tiny || val <= phi + 1e-4 * alpha * slope) {
                    break Some((cand, val));
                }
                alpha *= cfg.shrink;
                if alpha < 1e-12 {
                    break None;
                }
            };
            match accepted {
                Some((cand, val)) => {
                    qs = cand;
                    phi = val;
                }
                None => {
                    return Err(Error::Stagnation {
                        iterations: iters,
                        grad_norm: gn,
                        tolerance: cfg.grad_tol,
                    })
                }
            }
        }
        if gn >= cfg.grad_tol {
            return Err(Error::Stagnation {
                iterations: iters,
                grad_norm: gn,
                tolerance: cfg.grad_tol,
            });
        }
        let fibers = self
            .fibers
            .iter()
            .zip(qs)
            .map(|(f, q)| FiberNodes { du: f.du.clone(), q })
            .collect();
        let next = JkoState {
            grid: self.grid,
            fibers,
        };
        let before = self.free_energy(p);
        Ok((
            next,
            JkoDiag {
                n,
                objective: before + phi,
                decrease: -phi,
                grad_norm: gn,
                inner_iters: iters,
            },
        ))
    }

    /// `q + alpha d` on interior nodes, projected onto nondecreasing sequences.
    fn candidate(
        &self,
        qs: &[Vec<f64>],
        dirs: &[Vec<f64>],
        ders: &[(Vec<f64>, [Vec<f64>; 3], Vec<f64>)],
        alpha: f64,
    ) -> Result<Vec<Vec<f64>>> {
        qs.iter()
            .zip(dirs)
            .zip(ders)
            .enumerate()
            .map(|(i, ((q, d), (_, _, om)))| {
                let n = q.len();
                let mut c = q.clone();
                for r in 0..d.len() {
                    c[r + 1] += alpha * d[r];
                }
                if c.windows(2).all(|w| w[1] >= w[0]) {
                    return Ok(c);
                }
                // walls carry very large weight so they stay put
                let mut w = Vec::with_capacity(n);
                w.push(1e300);
                w.extend(om.iter().map(|o| o.max(1e-300)));
                w.push(1e300);
                let proj = isotonic(&c, &w);
                if !proj.windows(2).all(|w| w[1] >= w[0]) {
                    return Err(Error::Monotonicity { fiber: i });
                }
                Ok(proj)
            })
            .collect()
    }
}

/// One step from a grid measure; the output is re-binned to the grid.
pub fn jko_step(mu_prev: &GridMeasure, p: &ModelParams, cfg: &JkoConfig) -> Result<(GridMeasure, JkoDiag)> {
    let (next, diag) = JkoState::from_measure(mu_prev)?.step(p, cfg, 1)?;
    Ok((next.to_measure()?, diag))
}

#[derive(Debug, Clone)]
pub struct JkoRun {
    /// Re-binned iterates at `t = n tau`.
    pub curve: MeasureCurve,
    /// Quantile-node iterates, same times.
    pub states: Vec<JkoState>,
    pub diagnostics: Vec<JkoDiag>,
}

/// `ceil(T / tau)` steps; the state is carried in quantile form between steps.
pub fn solve_jko(mu0: &GridMeasure, p: &ModelParams, cfg: &JkoConfig, horizon: f64) -> Result<JkoRun> {
    cfg.validate(p)?;
    let steps = ((horizon / cfg.tau) - 1e-9).ceil().max(0.0) as usize;
    let mut state = JkoState::from_measure(mu0)?;
    let mut states = vec![state.clone()];
    let mut measures = vec![mu0.clone()];
    let mut times = vec![0.0];
    let mut diagnostics = Vec::with_capacity(steps);
    for n in 1..=steps {
        let (next, diag) = state.step(p, cfg, n)?;
        measures.push(next.to_measure()?);
        states.push(next.clone());
        times.push(n as f64 * cfg.tau);
        diagnostics.push(diag);
        state = next;
    }
    Ok(JkoRun {
        curve: MeasureCurve::new(times, measures)?,
        states,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::gibbs_measure;
    use crate::model::{default_model, Kernel, Polynomial};
    use crate::transport::{wl_distance, wl_distance_fibers};

    #[test]
    fn gibbs_state_is_a_fixed_point() {
        let th = ThetaGrid::new(-6.0, 6.0, 256).unwrap();
        let p = default_model(&th).with_kernel(Kernel::zero(), &th).unwrap();
        let eq = gibbs_measure(Grid::new(4, -6.0, 6.0, 256).unwrap(), &p).unwrap();
        let (out, diag) = jko_step(&eq, &p, &JkoConfig::new(0.1)).unwrap();
        assert!(wl_distance(&eq, &out).unwrap() < 1e-6);
        assert!(diag.decrease.abs() < 1e-12);
    }

    #[test]
    fn ou_mean_contracts() {
        let th = ThetaGrid::new(-8.0, 8.0, 400).unwrap();
        let p = ModelParams::new(Polynomial::new(vec![0.0, 0.0, 0.5]), Kernel::zero(), &th).unwrap();
        let a = 1.0;
        let g = Grid::new(2, -8.0, 8.0, 400).unwrap();
        let mu = GridMeasure::from_fn(g, |_, t| (-(t - a).powi(2) / 2.0).exp()).unwrap();
        let tau = 0.2;
        let st = JkoState::from_measure(&mu).unwrap();
        let (next, diag) = st.step(&p, &JkoConfig::new(tau), 1).unwrap();
        let m = next.fibers()[0].mean();
        assert!((m - a / (1.0 + tau)).abs() < 0.03 * a / (1.0 + tau), "{m}");
        assert!(diag.decrease > 0.0);
        let d = wl_distance_fibers(&st.quantiles().unwrap(), &next.quantiles().unwrap()).unwrap();
        assert!(d > 0.0);
    }

    #[test]
    fn tau_range_is_enforced() {
        let th = ThetaGrid::new(-6.0, 6.0, 64).unwrap();
        let p = default_model(&th);
        assert!(JkoConfig::new(0.7).validate(&p).is_err());
        assert!(JkoConfig::new(0.5).validate(&p).is_ok());
        let mut c = JkoConfig::new(0.1);
        c.m_q = 4;
        assert!(c.validate(&p).is_err());
    }
}
