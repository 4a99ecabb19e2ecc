//! Batch driver for the `lmf` binary.

pub mod check;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

pub use config::{Experiment, RunConfig};
pub use error::CliError;
use output::{Check, OutDir};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    experiment: Experiment,
    config_path: String,
    config: &'a RunConfig,
    config_text: &'a str,
    wall_time_s: f64,
    threads: usize,
    outputs: &'a [String],
    checks: &'a [Check],
    passed: bool,
}

fn dispatch(exp: Experiment, cfg: &RunConfig, out: &mut OutDir) -> Result<experiments::Report, CliError> {
    match exp {
        Experiment::Pde => experiments::pde(cfg, out),
        Experiment::Jko => experiments::jko(cfg, out),
        Experiment::Particles => experiments::particles(cfg, out),
        Experiment::Dissipation => experiments::dissipation(cfg, out),
        Experiment::Rate => experiments::rate(cfg, out),
        Experiment::HydroLadder => experiments::hydro_ladder(cfg, out),
        Experiment::Check => check::run(cfg, out),
        Experiment::Counterexample => experiments::counterexample(cfg, out),
    }
}

/// Runs one experiment; `None` takes it from the config. Returns the exit code.
pub fn execute(experiment: Option<Experiment>, config: &Path, out: &Path) -> Result<i32, CliError> {
    let start = Instant::now();
    let (cfg, text) = RunConfig::load(config)?;
    let exp = experiment
        .or(cfg.experiment)
        .ok_or_else(|| CliError::Config("experiment: not set in the config".into()))?;
    let mut dir = OutDir::create(out)?;
    let report = dispatch(exp, &cfg, &mut dir)?;
    print!("{}", report.summary);
    for c in &report.checks {
        println!("{}", c.line());
    }
    dir.write_checks(&report.checks)?;
    dir.write("summary.txt", &report.summary)?;
    let passed = report.checks.iter().all(|c| c.pass);
    let mut outputs = dir.files.clone();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        tool: "lmf",
        version: env!("CARGO_PKG_VERSION"),
        core_version: lmf_core::VERSION,
        experiment: exp,
        config_path: config.display().to_string(),
        config: &cfg,
        config_text: &text,
        wall_time_s: start.elapsed().as_secs_f64(),
        threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        outputs: &outputs,
        checks: &report.checks,
        passed,
    };
    dir.write_json("manifest.json", &manifest)?;
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}
