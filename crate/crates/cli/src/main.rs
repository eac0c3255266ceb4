//! `mechlab`: run mechanisms, verification suites and parameter sweeps.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 invalid
//! configuration or arguments, 3 infeasible predictor, 4 I/O failure.

mod commands;
mod config;
#[cfg(test)]
mod tests;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] mechlab_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(mechlab_core::Error::Infeasible) => 3,
            CliError::Core(_) => 2,
            CliError::Io { .. } => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mechlab",
    version,
    about = "Weakest-type mechanism experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo trials.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one mechanism and write outcome.json and report.json.
    Run(CommonArgs),
    /// Run a verification suite (or `all`) and print one line per check.
    Verify {
        suite: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep the doubling rule's closed forms; writes sweep.csv and SVGs.
    Sweep(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => commands::run(args),
        Command::Verify { suite, common } => commands::verify(suite, common),
        Command::Sweep(args) => commands::sweep(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
