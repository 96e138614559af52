mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(otkit::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Validation failures are attributed to the config key that caused them.
    pub fn config(key: &str, e: otkit::Error) -> Self {
        Self::Config(format!("{key}: {e}"))
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Io(_) => 1,
            Self::Solver(_) => 2,
        }
    }
}

impl From<otkit::Error> for CliError {
    fn from(e: otkit::Error) -> Self {
        use otkit::Error::*;
        match e {
            NotConverged { .. } | SizeExceeded { .. } | ZeroDiscrepancy { .. } | NonDifferentiablePoint => {
                Self::Solver(e)
            }
            Io(e) => Self::Io(e),
            other => Self::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "otkit", version, about = "Optimal transport, Sinkhorn divergences and kernel discrepancies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set sinkhorn.epsilon=0.1`. Repeatable.
    #[arg(long = "set", value_name = "K=V", global = true)]
    sets: Vec<String>,
    /// Write results even when a solve did not converge.
    #[arg(long, global = true)]
    allow_partial: bool,
    /// Seed for randomized initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Exact OT, OT_ε, S_ε, discrepancy or S_∞ between two measures.
    Compute,
    /// OT_ε and S_ε over a grid of ε, as CSV.
    Sweep,
    /// Approximate a target by equal-weight atoms.
    Dither,
    /// Dump Sinkhorn and limit potentials.
    Potentials,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config.as_deref() else {
        eprintln!("config error: --config is required");
        return ExitCode::from(1);
    };
    let opts = commands::Options {
        config,
        sets: &cli.sets,
        allow_partial: cli.allow_partial,
        seed: cli.seed,
    };
    let result = match cli.command {
        Command::Compute => commands::compute(&opts),
        Command::Sweep => commands::sweep(&opts),
        Command::Dither => commands::dither(&opts),
        Command::Potentials => commands::potentials(&opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
