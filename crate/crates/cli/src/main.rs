//! Command-line front end: loads a TOML configuration, applies flag
//! overrides, and dispatches one command. Exit codes: 0 success, 1 hard
//! error (bad config, solver failure, I/O), 2 command ran but its check
//! failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use langopt::config::{load_config, RunConfig};
use langopt::run::{run_command, Command};

#[derive(Parser)]
#[command(
    name = "langopt",
    about = "Simulation and optimal control of a stochastic two-language competition model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Clone, Parser)]
struct CommonArgs {
    /// Configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Override the configured base seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Solve the forward system on one sampled path and write the fields.
    Simulate(CommonArgs),
    /// Run the forward-backward sweep to the optimal controls on one path.
    Optimize(CommonArgs),
    /// Compare the adjoint directional derivative against finite differences.
    GradientCheck(CommonArgs),
    /// Compare both forward backends across time-step halvings on shared paths.
    EquivalenceCheck(CommonArgs),
    /// Run many paths and aggregate statistics.
    Ensemble(CommonArgs),
    /// Perturb the controls and measure state and adjoint response.
    StabilityProbe(CommonArgs),
}

impl CliCommand {
    fn split(&self) -> (Command, &CommonArgs) {
        match self {
            CliCommand::Simulate(a) => (Command::Simulate, a),
            CliCommand::Optimize(a) => (Command::Optimize, a),
            CliCommand::GradientCheck(a) => (Command::GradientCheck, a),
            CliCommand::EquivalenceCheck(a) => (Command::EquivalenceCheck, a),
            CliCommand::Ensemble(a) => (Command::Ensemble, a),
            CliCommand::StabilityProbe(a) => (Command::StabilityProbe, a),
        }
    }
}

fn load_with_overrides(args: &CommonArgs) -> langopt::error::Result<RunConfig> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.settings.seed = seed;
    }
    if let Some(out) = &args.out {
        config.settings.out_dir = out.clone();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = cli.command.split();

    let config = match load_with_overrides(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for w in &config.warnings {
        eprintln!("warning: {w}");
    }

    match run_command(command, &config) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
