//! `gsvie`: batch experiments over the G-SVIE toolkit.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration/schema error,
//! 3 numerical blowup, 4 informational violation (assumption or comparison).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsvie::GsvieError;

use crate::commands::Context;
use crate::config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("schema error at {0}")]
    Schema(String),
    #[error("{0}")]
    Blowup(String),
    #[error("{0}")]
    Violation(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Blowup(_) => 3,
            CliError::Violation(_) => 4,
        }
    }
}

impl From<GsvieError> for CliError {
    fn from(e: GsvieError) -> Self {
        match e.blowup_scenario() {
            Some(_) => CliError::Blowup(e.to_string()),
            None => CliError::Other(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "gsvie", version, about = "Stochastic Volterra equations under volatility uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a registry system on every scenario and write the paths.
    Simulate(Common),
    /// Max-over-controls Monte Carlo estimate (and optionally the exact lattice).
    Expectation(Common),
    /// Check assumptions, then run the comparison harness.
    Compare(Common),
    /// Quasilinearization and two-step convergence tables.
    Convergence(Common),
    /// Sampled assumption report.
    CheckAssumptions(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML, or JSON with a `.json` extension).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed; overrides `run.seed`.
    #[arg(long, env = "GSVIE_SEED", value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Run the comparison harness even if an assumption fails.
    #[arg(long)]
    force: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, common, f): (&'static str, Common, fn(&Context) -> Result<(), CliError>) = match cli.command {
        Command::Simulate(c) => ("simulate", c, commands::simulate),
        Command::Expectation(c) => ("expectation", c, commands::expectation),
        Command::Compare(c) => ("compare", c, commands::compare),
        Command::Convergence(c) => ("convergence", c, commands::convergence),
        Command::CheckAssumptions(c) => ("check-assumptions", c, commands::check),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    }
    let cfg = ExperimentConfig::load(&common.config)?;
    let ctx = Context {
        command: name,
        out: common.out.unwrap_or_else(|| PathBuf::from(&cfg.output.directory)),
        seed: common.seed.unwrap_or(cfg.run.seed),
        force: common.force,
        cfg,
    };
    f(&ctx)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gsvie: {e}");
            ExitCode::from(e.code())
        }
    }
}
