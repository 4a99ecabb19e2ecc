//! Quick invariant suite behind `lmf check`.

use lmf_core::analysis::counterexample;
use lmf_core::functionals::{gibbs_measure, hermite_fourier_family, metric_slope, variational_slope};
use lmf_core::jko::{jko_step, JkoConfig};
use lmf_core::lp::w2_lp_oracle;
use lmf_core::measure::DiscreteFiber;
use lmf_core::particles::{k_vs_l_distance, ParticleState};
use lmf_core::pde::{pde_step, solve_pde, PdeConfig};
use lmf_core::rng::{ParticleStream, Purpose};
use lmf_core::transport::{geodesic, w2_fiber, wl_distance};
use lmf_core::{Grid, GridMeasure, Kernel, ModelParams};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::experiments::Report;
use crate::output::{Check, OutDir};

struct Draws(ParticleStream);

impl Draws {
    fn new(seed: u64) -> Self {
        Draws(ParticleStream::new(seed, Purpose::Initial, 0))
    }

    fn uniform(&mut self, a: f64, b: f64) -> f64 {
        a + (b - a) * self.0.uniform_and_normal().0
    }

    fn discrete(&mut self) -> DiscreteFiber {
        let n = 1 + (self.uniform(0.0, 5.0) as usize).min(4);
        let raw: Vec<(f64, f64)> = (0..n).map(|_| (self.uniform(-3.0, 3.0), self.uniform(0.05, 1.0))).collect();
        let total: f64 = raw.iter().map(|a| a.1).sum();
        let mut atoms: Vec<(f64, f64)> = raw.iter().map(|&(t, m)| (t, m / total)).collect();
        let head: f64 = atoms[..n - 1].iter().map(|a| a.1).sum();
        atoms[n - 1].1 = 1.0 - head;
        DiscreteFiber::new(atoms).expect("normalized atoms")
    }

    fn measure(&mut self, g: Grid) -> GridMeasure {
        let centers = g.theta.centers();
        let mut raw = Vec::with_capacity(g.cells());
        for _ in 0..g.n_x() {
            let (m1, m2) = (self.uniform(-2.0, 2.0), self.uniform(-2.0, 2.0));
            let (s1, s2) = (self.uniform(0.4, 1.2), self.uniform(0.4, 1.2));
            let w = self.uniform(0.1, 0.9);
            raw.extend(centers.iter().map(|&t| {
                w * (-(t - m1).powi(2) / (2.0 * s1 * s1)).exp() / s1
                    + (1.0 - w) * (-(t - m2).powi(2) / (2.0 * s2 * s2)).exp() / s2
            }));
        }
        GridMeasure::normalize_fibers(g, raw).expect("positive mixture")
    }
}

fn small_grid(cfg: &RunConfig, n_x: usize, n_theta: usize) -> Result<Grid, CliError> {
    Ok(Grid::new(n_x, cfg.grid.theta_min, cfg.grid.theta_max, n_theta)?)
}

pub fn run(cfg: &RunConfig, out: &mut OutDir) -> Result<Report, CliError> {
    let p = cfg.model()?;
    let rt = CliError::runtime("check");
    let mut d = Draws::new(cfg.seeds.first().copied().unwrap_or(0));
    let mut checks = Vec::new();

    let ce = counterexample(16).map_err(&rt)?;
    checks.push(Check::holds("counterexample_wl_is_one", ce.wl == 1.0));
    checks.push(Check::at_most("counterexample_flat_w2", ce.w2_flat, 0.25 + 1e-9));

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (a, b) = (d.discrete(), d.discrete());
        worst = worst.max((w2_fiber(&a, &b).map_err(&rt)? - w2_lp_oracle(&a, &b).map_err(&rt)?).abs());
    }
    checks.push(Check::at_most("quantile_vs_lp", worst, 1e-9));

    let g = small_grid(cfg, 4, 64)?;
    let (mut asym, mut slack) = (0.0f64, f64::INFINITY);
    for _ in 0..50 {
        let (a, b, c) = (d.measure(g), d.measure(g), d.measure(g));
        let ab = wl_distance(&a, &b).map_err(&rt)?;
        asym = asym.max((ab - wl_distance(&b, &a).map_err(&rt)?).abs());
        slack = slack.min(ab + wl_distance(&b, &c).map_err(&rt)? - wl_distance(&a, &c).map_err(&rt)?);
    }
    checks.push(Check::at_most("wl_asymmetry", asym, 0.0));
    checks.push(Check::at_least("wl_triangle_slack", slack, -1e-12));

    let g = small_grid(cfg, 4, 256)?;
    let mut speed: f64 = 0.0;
    for _ in 0..5 {
        let (a, b) = (d.measure(g), d.measure(g));
        let full = wl_distance(&a, &b).map_err(&rt)?;
        for t in [0.25, 0.5, 0.75] {
            let m = geodesic(&a, &b, t).map_err(&rt)?;
            speed = speed.max((wl_distance(&a, &m).map_err(&rt)? / (t * full) - 1.0).abs());
        }
    }
    checks.push(Check::at_most("geodesic_speed_error", speed, 0.02));

    let th = cfg.theta()?;
    let free = p.with_kernel(Kernel::zero(), &th).map_err(&rt)?;
    let eq = gibbs_measure(small_grid(cfg, 2, cfg.grid.n_theta)?, &free).map_err(&rt)?;
    let next = pde_step(&eq, &free, 0.25 * th.dtheta().powi(2)).map_err(&rt)?;
    let cell = next.density().iter().zip(eq.density()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    checks.push(Check::at_most("gibbs_pde_step_change", cell, 1e-8));
    let (j, _) = jko_step(&eq, &free, &JkoConfig::new(0.1)).map_err(&rt)?;
    checks.push(Check::at_most("gibbs_jko_step_distance", wl_distance(&j, &eq).map_err(&rt)?, 1e-6));

    let mut kl: f64 = 0.0;
    for n in [1usize, 2, 10, 100, 1000] {
        for _ in 0..20 {
            let s = ParticleState::new((0..n).map(|_| d.uniform(-5.0, 5.0)).collect()).map_err(&rt)?;
            kl = kl.max(k_vs_l_distance(&s) * n as f64);
        }
    }
    checks.push(Check::at_most("n_times_k_vs_l_cost", kl, 1.0));

    let g = small_grid(cfg, 4, 128)?;
    let pg = model_on(cfg, 128)?;
    let fam = hermite_fourier_family(&g, 20);
    let mut below = f64::INFINITY;
    for _ in 0..10 {
        let mu = d.measure(g);
        below = below.min(metric_slope(&mu, &pg) - variational_slope(&mu, &pg, &fam).map_err(&rt)?);
    }
    checks.push(Check::at_least("metric_minus_variational_slope", below, -1e-8));

    let mu0 = cfg.initial_measure(&p)?;
    let run = solve_pde(&mu0, &p, &PdeConfig::new(0.1)).map_err(CliError::runtime("pde"))?;
    let uphill = run
        .observables
        .windows(2)
        .map(|w| w[1].free_energy - w[0].free_energy)
        .fold(0.0, f64::max);
    let mass = run.observables.iter().map(|o| o.fiber_mass_error).fold(0.0, f64::max);
    checks.push(Check::at_most("pde_energy_increase", uphill, 1e-9));
    checks.push(Check::at_most("pde_fiber_mass_error", mass, 1e-10));

    out.write_json("check.json", &checks)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    Ok(Report {
        summary: format!("{} checks, {failed} failed\n", checks.len()),
        checks,
    })
}

/// The configured model rebuilt on a different spin grid.
fn model_on(cfg: &RunConfig, n_theta: usize) -> Result<ModelParams, CliError> {
    let mut c = cfg.clone();
    c.grid.n_theta = n_theta;
    c.model()
}
