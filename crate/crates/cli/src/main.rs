//! `csdiv`: estimators, conditional two-sample tests, theory sweeps and the
//! domain-adaptation trainer from the command line.
//!
//! Exit codes: 0 success, 2 input, 3 numeric, 4 theory violation, 5 training.

mod commands;
mod io;
mod manifest;

use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EstimateArgs, ReplayArgs, TestArgs, UdaArgs, ValidateArgs};

#[derive(Debug, Parser)]
#[command(name = "csdiv", version, about = "Cauchy-Schwarz divergence estimators, tests, sweeps and trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a divergence between two CSV data files.
    Estimate(EstimateArgs),
    /// Conditional two-sample permutation tests on synthetic variants.
    Test(TestArgs),
    /// Sweep a divergence inequality and report violations.
    Validate(ValidateArgs),
    /// Train on a synthetic domain-shift task.
    Uda(UdaArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_VIOLATION: u8 = 4;
pub const EXIT_TRAINING: u8 = 5;

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::input(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<csdiv::Error> for CliError {
    fn from(e: csdiv::Error) -> Self {
        let code = match e {
            csdiv::Error::NumericalInstability(_) => EXIT_NUMERIC,
            csdiv::Error::NonFiniteLoss { .. } => EXIT_TRAINING,
            _ => EXIT_INPUT,
        };
        Self { code, message: e.to_string() }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("CSDIV_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::input(format!("CSDIV_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<u8, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Test(a) => commands::test(a),
        Command::Validate(a) => commands::validate(a),
        Command::Uda(a) => commands::uda(a),
        Command::Replay(a) => commands::replay(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
