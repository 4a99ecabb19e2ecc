use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lmf_cli::{execute, Experiment, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "lmf", version, about = "Fibered Wasserstein gradient flows of local mean-field spin systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in the config.
    Run(Io),
    /// Finite-volume gradient flow.
    Pde(Io),
    /// Minimizing-movement scheme.
    Jko(Io),
    /// Interacting particle system.
    Particles(Io),
    /// Energy-dissipation functional along the PDE flow.
    Dissipation(Io),
    /// Rate function of the PDE flow from `[rate] start`.
    Rate(Io),
    /// Particle-number ladder against the PDE flow.
    HydroLadder(Io),
    /// Quick invariant suite.
    Check(Io),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (exp, io) = match cli.command {
        Command::Run(io) => (None, io),
        Command::Pde(io) => (Some(Experiment::Pde), io),
        Command::Jko(io) => (Some(Experiment::Jko), io),
        Command::Particles(io) => (Some(Experiment::Particles), io),
        Command::Dissipation(io) => (Some(Experiment::Dissipation), io),
        Command::Rate(io) => (Some(Experiment::Rate), io),
        Command::HydroLadder(io) => (Some(Experiment::HydroLadder), io),
        Command::Check(io) => (Some(Experiment::Check), io),
    };
    match execute(exp, &io.config, &io.out) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
