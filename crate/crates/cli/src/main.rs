use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rve_select::commands::{self, Overrides};
use rve_select::config;
use rve_select::CliResult;

/// Selection of representative volumes for random 2D scalar conductivity.
///
/// Exit codes: 0 success, 1 a reported check failed, 2 invalid configuration,
/// 3 runtime or I/O error.
#[derive(Debug, Parser)]
#[command(name = "rve-select", version)]
struct Cli {
    /// Master seed; overrides `master_seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, env = "RVE_SELECT_WORKERS")]
    workers: Option<usize>,
    /// Output directory; overrides `[output] dir` (default: rve-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate, run plain and selected ensembles, write samples.csv,
    /// summary.json and plots.
    Run { config: PathBuf },
    /// Run the closed-form and brute-force oracle checks.
    Verify,
    /// Variance of an estimator against the number of cells.
    Scaling { config: PathBuf },
    /// Locate the zero-covariance interpolation and test selection there.
    Counterexample { config: PathBuf },
}

fn load(path: &Path, overrides: &Overrides) -> CliResult<config::Config> {
    let mut cfg = config::parse_config(path)?;
    overrides.apply(&mut cfg);
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CliResult<bool> {
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
    };
    match cli.command {
        Command::Run { config } => commands::run(&load(&config, &overrides)?),
        Command::Verify => Ok(commands::verify()),
        Command::Scaling { config } => commands::scaling(&load(&config, &overrides)?).map(|_| true),
        Command::Counterexample { config } => commands::counterexample(&load(&config, &overrides)?),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
