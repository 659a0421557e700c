//! `clusterld`: simulation and verification experiments from a TOML config.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 configuration error,
//! 3 cluster size cap exceeded.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::Config;
use crate::run::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "clusterld",
    version,
    about = "Poisson cluster and Hawkes process experiments"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replication loops; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one realization and dump it.
    Simulate,
    /// Tabulate the rate function on a grid.
    Ratefn,
    /// Run a Monte Carlo verification experiment.
    Verify {
        #[arg(value_enum)]
        experiment: Experiment,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    Scalar,
    Path,
    Spatial,
    Void,
    Oracle,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = Config::load(&path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.output.dir = Some(out);
    }
    if cli.threads == Some(0) {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Simulate => run::simulate(&config),
        Command::Ratefn => run::ratefn(&config),
        Command::Verify { experiment } => match experiment {
            Experiment::Scalar => run::verify_scalar(&config),
            Experiment::Path => run::verify_path(&config),
            Experiment::Spatial => run::verify_spatial(&config),
            Experiment::Void => run::verify_void(&config),
            Experiment::Oracle => run::verify_oracle(&config),
        },
    })
}
