//! One function per experiment. Each writes its files and returns the
//! declared checks plus a human summary.

use lmf_core::analysis::{counterexample as counterexample_report, dissipation as dissipation_report, hydrodynamic_gap, ldp_rate, HydroConfig};
use lmf_core::io::{fmt17, CsvTable};
use lmf_core::jko::{solve_jko, JKO_DIAG_HEADER};
use lmf_core::particles::{k_vs_l_distance, recovery_sequence, sample_product, simulate, SimOptions};
use lmf_core::pde::{observables, solve_pde, solve_pde_curve, Observables, PdeConfig, OBSERVABLES_HEADER};
use lmf_core::MeasureCurve;

use crate::config::{build_initial, RunConfig};
use crate::error::CliError;
use crate::output::{Check, OutDir};

pub struct Report {
    pub checks: Vec<Check>,
    pub summary: String,
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("{section}: section missing"))
}

fn write_observables(out: &mut OutDir, obs: &[Observables]) -> Result<(), CliError> {
    let mut s = String::from(OBSERVABLES_HEADER);
    s.push('\n');
    for o in obs {
        s.push_str(&o.csv_row());
        s.push('\n');
    }
    out.write("observables.csv", &s)
}

/// Conservation, positivity, monotone energy and the boundary monitor.
fn curve_checks(curve: &MeasureCurve, obs: &[Observables], cfg: &RunConfig, uphill_slack: f64) -> Vec<Check> {
    let mass = obs.iter().map(|o| o.fiber_mass_error).fold(0.0, f64::max);
    let min_rho = curve
        .states()
        .iter()
        .flat_map(|s| s.density().iter().copied())
        .fold(f64::INFINITY, f64::min);
    let uphill = obs
        .windows(2)
        .map(|w| w[1].free_energy - w[0].free_energy)
        .fold(f64::NEG_INFINITY, f64::max);
    let boundary = obs.iter().skip(1).map(|o| o.boundary_mass).fold(0.0, f64::max);
    let mut checks = vec![
        Check::at_most("fiber_mass_error", mass, 1e-10),
        Check::at_least("min_density", min_rho, 0.0),
        Check::at_most("energy_increase", uphill.max(0.0), uphill_slack),
        Check::at_most("boundary_mass", boundary, 1e-8),
    ];
    if let (Some(th), Some(last)) = (cfg.checks.final_slope_max, obs.last()) {
        checks.push(Check::at_most("final_slope", last.slope, th));
    }
    checks
}

pub fn pde(cfg: &RunConfig, out: &mut OutDir) -> Result<Report, CliError> {
    let p = cfg.model()?;
    let mu0 = cfg.initial_measure(&p)?;
    let pc = cfg.pde.ok_or_else(|| missing("pde"))?;
    let run = solve_pde(&mu0, &p, &pc).map_err(CliError::runtime("pde"))?;
    out.write_curve(&run.curve)?;
    write_observables(out, &run.observables)?;
    let last = run.observables.last().expect("curve has samples");
    let summary = format!(
        "inner step {:.6e} (stability bound {:.6e}, {} halvings)\nF(T) = {:.12e}, slope(T) = {:.6e}\n",
        run.dt, run.stability_bound, run.halvings, last.free_energy, last.slope
    );
    Ok(Report {
        checks: curve_checks(&run.curve, &run.observables, cfg, 1e-9),
        summary,
    })
}

pub fn jko(cfg: &RunConfig, out: &mut OutDir) -> Result<Report, CliError> {
    let p = cfg.model()?;
    let (jc, horizon) = cfg.jko_config(&p)?;
    let mu0 = cfg.initial_measure(&p)?;
    let run = solve_jko(&mu0, &p, &jc, horizon).map_err(CliError::runtime("jko"))?;
    out.write_curve(&run.curve)?;
    let obs = observables(&run.curve, &p).map_err(CliError::runtime("jko"))?;
    write_observables(out, &obs)?;
    let mut diag = String::from(JKO_DIAG_HEADER);
    diag.push('\n');
    for d in &run.diagnostics {
        diag.push_str(&format!(
            "{},{},{},{},{}\n",
            d.n,
            fmt17(d.objective),
            fmt17(d.decrease),
            fmt17(d.grad_norm),
            d.inner_iters
        ));
    }
    out.write("jko_diag.csv", &diag)?;
    let min_decrease = run.diagnostics.iter().map(|d| d.decrease).fold(f64::INFINITY, f64::min);
    let mut checks = curve_checks(&run.curve, &obs, cfg, 1e-12);
    checks.push(Check::at_least("objective_decrease", min_decrease, 0.0));
    let summary = format!(
        "{} steps of tau = {}; F(T) = {:.12e}\n",
        run.diagnostics.len(),
        jc.tau,
        obs.last().map(|o| o.free_energy).unwrap_or(f64::NAN)
    );
    Ok(Report { checks, summary })
}

fn seeds(cfg: &RunConfig) -> Vec<u64> {
    if cfg.seeds.is_empty() {
        vec![0]
    } else {
        cfg.seeds.clone()
    }
}

pub fn particles(cfg: &RunConfig, out: &mut OutDir) -> Result<Report, CliError> {
    let p = cfg.model()?;
    let spec = cfg.particles.as_ref().ok_or_else(|| missing("particles"))?;
    let mu0 = cfg.initial_measure(&p)?;
    let nu = recovery_sequence(&mu0, spec.n).map_err(CliError::runtime("particles"))?;
    let mut opts = SimOptions::new(&cfg.theta()?);
    opts.record_stride = spec.record_stride.max(1);
    let mut worst: f64 = 0.0;
    let mut summary = String::new();
    for seed in seeds(cfg) {
        let s0 = sample_product(&nu, seed).map_err(CliError::runtime("particles"))?;
        let tr = simulate(&s0, &p, spec.dt, spec.horizon, seed, &opts).map_err(CliError::runtime("particles"))?;
        out.write(&format!("trajectory_seed{seed}.csv"), &tr.to_csv())?;
        let last = tr.last();
        worst = worst.max(k_vs_l_distance(last) * spec.n as f64);
        let mean = last.thetas().iter().sum::<f64>() / spec.n as f64;
        summary.push_str(&format!("seed {seed}: {} samples, final mean spin {mean:.6}\n", tr.times.len()));
    }
    Ok(Report {
        checks: vec![Check::at_most("n_times_k_vs_l_cost", worst, 1.0)],
        summary,
    })
}

fn flow(cfg: &RunConfig, start: &lmf_core::GridMeasure, p: &lmf_core::ModelParams) -> Result<MeasureCurve, CliError> {
    let pc = cfg.pde.ok_or_else(|| missing("pde"))?;
    Ok(solve_pde_curve(start, p, &pc).map_err(CliError::runtime("pde"))?.0)
}

pub fn dissipation(cfg: &RunConfig, out: &mut OutDir) -> Result<Report, CliError> {
    let p = cfg.model()?;
    let mu0 = cfg.initial_measure(&p)?;
    let curve = flow(cfg, &mu0, &p)?;
    let d = dissipation_report(&curve, &p).map_err(CliError::runtime("analysis"))?;
    out.write_json("dissipation.json", &d)?;
    out.write("dissipation.txt", &d.to_text())?;
    let mut t = CsvTable::new(&["t", "quantity", "value"]);
    for r in &d.rows {
        for (q, v) in [("free_energy", r.free_energy), ("slope", r.slope_sq.sqrt()), ("metric_derivative", r.speed_sq.sqrt())] {
            t.push(vec![fmt17(r.t), q.to_string(), fmt17(v)]);
        }
    }
    out.write("distances.csv", &t.render())?;
    let mut checks = vec![Check::at_least("slope_integral", d.slope_integral, 0.0)];
    if let Some(th) = cfg.checks.residual_ratio_max {
        checks.push(Check::at_most("residual_ratio", d.residual.abs() / d.slope_integral, th));
    }
    Ok(Report {
        checks,
        summary: d.to_text(),
    })
}

pub fn rate(cfg: &RunConfig, out: &mut OutDir) -> Result<Report, CliError> {
    let p = cfg.model()?;
    let reference = cfg.initial_measure(&p)?;
    let start = match cfg.rate.as_ref().and_then(|r| r.start.as_ref()) {
        Some(spec) => build_initial(spec, cfg.grid()?, &p).map_err(|e| CliError::Config(format!("rate.start: {e}")))?,
        None => reference.clone(),
    };
    let curve = flow(cfg, &start, &p)?;
    let r = ldp_rate(&curve, &reference, &p).map_err(CliError::runtime("analysis"))?;
    out.write_json("rate.json", &r)?;
    out.write("rate.txt", &r.to_text())?;
    let mut checks = Vec::new();
    if let Some(th) = cfg.checks.rate_max {
        checks.push(Check::at_most("rate", r.rate, th));
    }
    if let Some(th) = cfg.checks.rate_min {
        checks.push(Check::at_least("rate", r.rate, th));
    }
    Ok(Report {
        checks,
        summary: r.to_text(),
    })
}

pub fn hydro_ladder(cfg: &RunConfig, out: &mut OutDir) -> Result<Report, CliError> {
    let p = cfg.model()?;
    let spec = cfg.hydro.as_ref().ok_or_else(|| missing("hydro"))?;
    let mu0 = cfg.initial_measure(&p)?;
    let hc = HydroConfig {
        ns: spec.ns.clone(),
        seeds: seeds(cfg),
        dt: spec.dt,
        horizon: spec.horizon,
        sample_interval: spec.sample_interval,
        bins: spec.bins,
        pde: cfg.pde.unwrap_or_else(|| PdeConfig::new(spec.horizon)),
    };
    let table = hydrodynamic_gap(&mu0, &p, &hc).map_err(CliError::runtime("analysis"))?;
    out.write("hydro.csv", &table.to_csv())?;
    out.write_json("hydro.json", &table)?;
    let mut summary = table.to_csv();
    for (n, e) in &table.failures {
        summary.push_str(&format!("N = {n} failed: {e}\n"));
    }
    let mut checks = vec![Check::at_most("failed_entries", table.failures.len() as f64, 0.0)];
    if cfg.checks.hydro_monotone {
        let mut ns = spec.ns.clone();
        ns.sort_unstable();
        let times: Vec<f64> = table.rows.iter().filter(|r| r.n == ns[0]).map(|r| r.t).collect();
        let decreasing = |f: &dyn Fn(f64, usize) -> Option<f64>, t: f64| {
            let v: Vec<Option<f64>> = ns.iter().map(|&n| f(t, n)).collect();
            v.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b < a))
        };
        let w2 = |t: f64, n: usize| table.row(n, t).map(|r| r.w2);
        let gap = |t: f64, n: usize| table.row(n, t).map(|r| r.gap);
        for &t in times.iter().filter(|&&t| t > 0.0) {
            checks.push(Check::holds(&format!("w2_decreasing_t{t}"), decreasing(&w2, t)));
        }
        checks.push(Check::holds("gap_decreasing_t0", decreasing(&gap, 0.0)));
    }
    Ok(Report { checks, summary })
}

pub fn counterexample(cfg: &RunConfig, out: &mut OutDir) -> Result<Report, CliError> {
    let n_x = cfg.counterexample.as_ref().map(|c| c.n_x).unwrap_or(16);
    let r = counterexample_report(n_x).map_err(|e| CliError::Config(format!("counterexample.n_x: {e}")))?;
    out.write_json("counterexample.json", &r)?;
    Ok(Report {
        checks: vec![
            Check::holds("wl_equals_one", r.wl == 1.0),
            Check::at_most("flattened_w2", r.w2_flat, 0.25 + 1e-9),
        ],
        summary: r.to_text(),
    })
}
