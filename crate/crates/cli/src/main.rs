mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Exit status 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    /// Exit status 3.
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "seisdiag", version, about = "Seismic damage diagnosis from cumulative intensity features")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Existence,
    Location,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the hazard scenario and write a labeled dataset.
    Simulate,
    /// Tune and train a model on a dataset.
    Train {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Dataset CSV; defaults to `dataset.csv` in the output directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Predict labels with a trained bundle.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        dataset: Option<PathBuf>,
        /// One comma-separated feature row in the bundle layout.
        #[arg(long, allow_hyphen_values = true)]
        features: Option<String>,
    },
    /// Render a score-matrix CSV as a confusion table.
    Report {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Score a trained bundle on a labeled dataset.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("seisdiag: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
