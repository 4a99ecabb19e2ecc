//! Finite-volume integration of the per-fiber McKean-Vlasov equation
//! `d_t rho = d_theta ( d_theta rho + rho (Psi' - m) )`.
//!
//! Each step freezes the magnetization `m` from the current state and solves
//! the local drift-diffusion problem by backward Euler with a
//! Scharfetter-Gummel (or central) flux and no-flux walls.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::MeasureCurve;
use crate::error::{Error, Result};
use crate::functionals::{free_energy_parts, magnetization, slope_field};
use crate::measure::{GridMeasure, DYNAMICS_TOL};
use crate::model::ModelParams;
use crate::transport::metric_derivative;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    Central,
    #[default]
    ExponentialFitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    /// Inner step; `None` selects `0.25 dtheta^2`.
    #[serde(default)]
    pub dt: Option<f64>,
    pub horizon: f64,
    /// Inner steps per output sample.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub scheme: FluxScheme,
}

fn default_stride() -> usize {
    16
}

impl PdeConfig {
    pub fn new(horizon: f64) -> Self {
        Self {
            dt: None,
            horizon,
            stride: default_stride(),
            scheme: FluxScheme::default(),
        }
    }

    pub fn requested_dt(&self, dtheta: f64) -> f64 {
        self.dt.unwrap_or(0.25 * dtheta * dtheta)
    }
}

/// Step bound from the explicit treatment of the nonlocal term, `1 / ||J||`.
///
/// The local part is implicit and positivity-preserving for any step with the
/// exponential-fitting flux.
pub fn stability_bound(p: &ModelParams) -> f64 {
    let j = p.kernel().sup_norm();
    if j == 0.0 {
        f64::INFINITY
    } else {
        1.0 / j
    }
}

/// Bernoulli function `z / (e^z - 1)`.
pub fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-6 {
        1.0 - z / 2.0 + z * z / 12.0
    } else {
        z / z.exp_m1()
    }
}

fn flux_weights(scheme: FluxScheme, du: f64) -> (f64, f64) {
    match scheme {
        FluxScheme::ExponentialFitting => (bernoulli(du), bernoulli(-du)),
        FluxScheme::Central => (1.0 - du / 2.0, 1.0 + du / 2.0),
    }
}

/// Backward-Euler step for one fiber with potential `u` at cell centres.
///
/// The flux `F_{j+1/2} = (B(dU) rho_j - B(-dU) rho_{j+1}) / h` vanishes on
/// `exp(-u)`, so the grid Gibbs state of a frozen potential is exactly
/// stationary.
pub fn fiber_step(row: &[f64], u: &[f64], h: f64, dt: f64, scheme: FluxScheme, out: &mut [f64]) {
    let n = row.len();
    let c = dt / (h * h);
    let mut lower = vec![0.0; n];
    let mut diag = vec![1.0; n];
    let mut upper = vec![0.0; n];
    for j in 0..n - 1 {
        let (bp, bm) = flux_weights(scheme, u[j + 1] - u[j]);
        diag[j] += c * bp;
        upper[j] = -c * bm;
        diag[j + 1] += c * bm;
        lower[j + 1] = -c * bp;
    }
    thomas(&lower, &diag, &upper, row, out);
}

/// Tridiagonal solve; `lower[0]` and `upper[n-1]` are ignored.
pub(crate) fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], out: &mut [f64]) {
    let n = diag.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = upper[0] / diag[0];
    dp[0] = rhs[0] / diag[0];
    for j in 1..n {
        let m = diag[j] - lower[j] * cp[j - 1];
        cp[j] = if j + 1 < n { upper[j] / m } else { 0.0 };
        dp[j] = (rhs[j] - lower[j] * dp[j - 1]) / m;
    }
    out[n - 1] = dp[n - 1];
    for j in (0..n - 1).rev() {
        out[j] = dp[j] - cp[j] * out[j + 1];
    }
}

fn step_inner(mu: &GridMeasure, p: &ModelParams, dt: f64, scheme: FluxScheme, step: usize) -> Result<GridMeasure> {
    let g = *mu.grid();
    let (nt, h) = (g.n_theta(), g.dtheta());
    let m = magnetization(mu, p);
    let centers = g.theta.centers();
    let psi: Vec<f64> = centers.iter().map(|&t| p.psi(t)).collect();
    let mut rho = vec![0.0; g.cells()];
    rho.par_chunks_mut(nt).enumerate().for_each(|(i, out)| {
        let u: Vec<f64> = psi
            .iter()
            .zip(&centers)
            .map(|(s, t)| s - m.values[i] * t)
            .collect();
        fiber_step(mu.row(i), &u, h, dt, scheme, out);
    });
    for (k, v) in rho.iter_mut().enumerate() {
        if !v.is_finite() || *v < -1e-12 {
            return Err(Error::Integration {
                step,
                reason: format!("density {v} in cell ({}, {})", k / nt, k % nt),
            });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    GridMeasure::with_tolerance(g, rho, DYNAMICS_TOL).map_err(|e| Error::Integration {
        step,
        reason: e.to_string(),
    })
}

/// One step with the default exponential-fitting flux.
pub fn pde_step(mu: &GridMeasure, p: &ModelParams, dt: f64) -> Result<GridMeasure> {
    step_inner(mu, p, dt, FluxScheme::ExponentialFitting, 0)
}

pub fn pde_step_with(mu: &GridMeasure, p: &ModelParams, dt: f64, scheme: FluxScheme) -> Result<GridMeasure> {
    step_inner(mu, p, dt, scheme, 0)
}

/// Per-sample diagnostics of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub t: f64,
    pub free_energy: f64,
    pub entropy: f64,
    pub potential: f64,
    pub interaction: f64,
    pub slope: f64,
    pub metric_derivative: f64,
    pub fiber_mass_error: f64,
    pub boundary_mass: f64,
}

pub const OBSERVABLES_HEADER: &str =
    "t,free_energy,entropy,potential,interaction,slope,metric_derivative,fiber_mass_error,boundary_mass";

impl Observables {
    pub fn csv_row(&self) -> String {
        use crate::io::fmt17;
        [
            self.t,
            self.free_energy,
            self.entropy,
            self.potential,
            self.interaction,
            self.slope,
            self.metric_derivative,
            self.fiber_mass_error,
            self.boundary_mass,
        ]
        .iter()
        .map(|v| fmt17(*v))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// Observables for every sample of a curve.
pub fn observables(curve: &MeasureCurve, p: &ModelParams) -> Result<Vec<Observables>> {
    let n = curve.len();
    let md: Vec<f64> = if n < 2 {
        vec![0.0; n]
    } else {
        (0..n)
            .into_par_iter()
            .map(|k| metric_derivative(curve, k).map(|d| d.value))
            .collect::<Result<_>>()?
    };
    Ok(curve
        .states()
        .par_iter()
        .zip(curve.times())
        .zip(md)
        .map(|((mu, &t), d)| {
            let parts = free_energy_parts(mu, p);
            Observables {
                t,
                free_energy: parts.total,
                entropy: parts.entropy,
                potential: parts.potential,
                interaction: parts.interaction,
                slope: slope_field(mu, p).norm(),
                metric_derivative: d,
                fiber_mass_error: mu.fiber_mass_error(),
                boundary_mass: mu.boundary_mass(),
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct PdeRun {
    pub curve: MeasureCurve,
    pub observables: Vec<Observables>,
    /// Inner step actually used.
    pub dt: f64,
    pub stability_bound: f64,
    /// Number of times the step was halved after a failure.
    pub halvings: u32,
}

const MAX_HALVINGS: u32 = 6;

/// Integrates to the horizon, sampling every `stride` inner steps.
///
/// The inner step is shrunk so that the horizon is a whole number of output
/// intervals; on failure the step is halved and the run restarted.
pub fn solve_pde(mu0: &GridMeasure, p: &ModelParams, cfg: &PdeConfig) -> Result<PdeRun> {
    let curve = solve_pde_curve(mu0, p, cfg)?;
    let observables = observables(&curve.0, p)?;
    Ok(PdeRun {
        curve: curve.0,
        observables,
        dt: curve.1,
        stability_bound: stability_bound(p),
        halvings: curve.2,
    })
}

/// As [`solve_pde`] without the observables.
pub fn solve_pde_curve(mu0: &GridMeasure, p: &ModelParams, cfg: &PdeConfig) -> Result<(MeasureCurve, f64, u32)> {
    if !(cfg.horizon > 0.0) || cfg.stride == 0 {
        return Err(Error::InvalidParameter("horizon must be positive and stride nonzero".into()));
    }
    let dt0 = cfg.requested_dt(mu0.grid().dtheta());
    if !(dt0 > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt0} must be positive")));
    }
    let bound = stability_bound(p);
    if dt0 > bound {
        return Err(Error::InvalidParameter(format!(
            "dt = {dt0} exceeds the stability bound {bound}"
        )));
    }
    if !free_energy_parts(mu0, p).total.is_finite() {
        return Err(Error::InvalidParameter("initial free energy is not finite".into()));
    }
    let mut last_err = None;
    for halving in 0..=MAX_HALVINGS {
        let req = dt0 / f64::powi(2.0, halving as i32);
        let samples = ((cfg.horizon / (req * cfg.stride as f64)) - 1e-9).ceil().max(1.0) as usize;
        let dt = cfg.horizon / (samples * cfg.stride) as f64;
        match run_fixed(mu0, p, dt, cfg.stride, samples, cfg.scheme) {
            Ok(curve) => return Ok((curve, dt, halving)),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn run_fixed(
    mu0: &GridMeasure,
    p: &ModelParams,
    dt: f64,
    stride: usize,
    samples: usize,
    scheme: FluxScheme,
) -> Result<MeasureCurve> {
    let mut times = vec![0.0];
    let mut states = vec![mu0.clone()];
    let mut mu = mu0.clone();
    let mut step = 0;
    for s in 1..=samples {
        for _ in 0..stride {
            step += 1;
            mu = step_inner(&mu, p, dt, scheme, step)?;
        }
        times.push(dt * (s * stride) as f64);
        states.push(mu.clone());
    }
    MeasureCurve::new(times, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{free_energy, gibbs_measure, metric_slope};
    use crate::grid::{Grid, ThetaGrid};
    use crate::model::{default_model, Kernel, Polynomial};

    #[test]
    fn bernoulli_is_smooth_at_zero() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-6) - bernoulli(1.0000001e-6)).abs() < 1e-12);
        assert!((bernoulli(2.0) - 2.0 / (2f64.exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gibbs_state_is_stationary() {
        let th = ThetaGrid::new(-6.0, 6.0, 256).unwrap();
        let p = default_model(&th).with_kernel(Kernel::zero(), &th).unwrap();
        let eq = gibbs_measure(Grid::new(4, -6.0, 6.0, 256).unwrap(), &p).unwrap();
        let next = pde_step(&eq, &p, 0.25 * th.dtheta().powi(2)).unwrap();
        for (a, b) in eq.density().iter().zip(next.density()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn pure_diffusion_variance_grows_by_two_dt() {
        let (h, n) = (0.05, 400);
        let row: Vec<f64> = (0..n)
            .map(|j| {
                let t = -10.0 + (j as f64 + 0.5) * h;
                (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
            })
            .collect();
        let u = vec![0.0; n];
        let dt = 0.01;
        let mut out = vec![0.0; n];
        fiber_step(&row, &u, h, dt, FluxScheme::ExponentialFitting, &mut out);
        let var = |r: &[f64]| {
            r.iter()
                .enumerate()
                .map(|(j, v)| v * (-10.0 + (j as f64 + 0.5) * h).powi(2))
                .sum::<f64>()
                * h
        };
        let grow = var(&out) - var(&row);
        assert!((grow - 2.0 * dt).abs() < 0.01 * 2.0 * dt, "{grow}");
        let mass: f64 = out.iter().sum::<f64>() * h;
        assert!((mass - row.iter().sum::<f64>() * h).abs() < 1e-12);
    }

    #[test]
    fn mass_and_positivity() {
        let th = ThetaGrid::new(-6.0, 6.0, 128).unwrap();
        let p = default_model(&th);
        let g = Grid::new(8, -6.0, 6.0, 128).unwrap();
        let mu = GridMeasure::from_fn(g, |x, t| (-(t - 2.0 * x).powi(2) * 4.0).exp()).unwrap();
        let next = pde_step(&mu, &p, 0.01).unwrap();
        assert!(next.fiber_mass_error() < 1e-12);
        assert!(next.density().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn energy_decreases_and_slope_vanishes() {
        // the centred slope of a grid Gibbs state is O(dtheta^2); 1024 cells put it near 7e-4
        let th = ThetaGrid::new(-6.0, 6.0, 1024).unwrap();
        let p = default_model(&th).with_kernel(Kernel::Cosine { amplitude: 0.1 }, &th).unwrap();
        let g = Grid::new(8, -6.0, 6.0, 1024).unwrap();
        let mu = GridMeasure::from_fn(g, |x, t| (-(t - (std::f64::consts::TAU * x).cos()).powi(2)).exp()).unwrap();
        let cfg = PdeConfig {
            dt: Some(0.01),
            horizon: 12.0,
            stride: 100,
            scheme: FluxScheme::ExponentialFitting,
        };
        let run = solve_pde(&mu, &p, &cfg).unwrap();
        for w in run.observables.windows(2) {
            assert!(w[1].free_energy <= w[0].free_energy + 1e-9);
        }
        let last = run.curve.last();
        assert!(metric_slope(last, &p) < 1e-3, "{}", metric_slope(last, &p));
        let again = pde_step(last, &p, 0.01).unwrap();
        assert!(last.total_variation(&again).unwrap() < 1e-5);
        assert!(free_energy(last, &p) < free_energy(&mu, &p));
    }

    #[test]
    fn decoupled_fibers_match_single_fiber_runs() {
        let th = ThetaGrid::new(-5.0, 5.0, 80).unwrap();
        let p = ModelParams::new(Polynomial::new(vec![0.0, 0.3, 0.5]), Kernel::zero(), &th).unwrap();
        let g = Grid::new(4, -5.0, 5.0, 80).unwrap();
        let mu = GridMeasure::from_fn(g, |x, t| (-(t - 3.0 * x).powi(2)).exp()).unwrap();
        let cfg = PdeConfig {
            dt: Some(0.005),
            horizon: 0.2,
            stride: 10,
            scheme: FluxScheme::ExponentialFitting,
        };
        let run = solve_pde_curve(&mu, &p, &cfg).unwrap().0;
        let u: Vec<f64> = th.centers().iter().map(|&t| p.psi(t)).collect();
        for i in 0..4 {
            let mut row = mu.row(i).to_vec();
            let mut out = vec![0.0; 80];
            for _ in 0..40 {
                fiber_step(&row, &u, th.dtheta(), 0.005, FluxScheme::ExponentialFitting, &mut out);
                row.copy_from_slice(&out);
            }
            for (a, b) in row.iter().zip(run.last().row(i)) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
