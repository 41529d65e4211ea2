//! `kdm`: datasets, kernel selection, fitting, evaluation and benchmark suites.

mod commands;
mod io;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kdm::KdmError;

use commands::{CvArgs, EvalArgs, FitArgs, GenArgs, ReproduceArgs};

#[derive(Debug, Parser)]
#[command(name = "kdm", version, about = "Kernelized diffusion maps with adaptive kernel selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a benchmark dataset.
    Gen(GenArgs),
    /// Score the kernel grid by cross-validation.
    Cv(CvArgs),
    /// Fit eigenfunctions with one method.
    Fit(FitArgs),
    /// Append SubR² and correlation metrics for a fit.
    Eval(EvalArgs),
    /// Run a benchmark suite over seeds.
    Reproduce(ReproduceArgs),
}

/// Bad invocation or inconsistent inputs; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if cause.is::<csv::Error>() || cause.is::<std::num::ParseFloatError>() {
            return 2;
        }
        if let Some(k) = cause.downcast_ref::<KdmError>() {
            return match k {
                KdmError::InvalidParameter(_)
                | KdmError::InvalidBandwidth(_)
                | KdmError::UnsupportedFamily(_)
                | KdmError::DimensionMismatch { .. }
                | KdmError::Shape(_)
                | KdmError::NoGenerator(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Cv(a) => commands::cv(a),
        Command::Fit(a) => commands::fit(a),
        Command::Eval(a) => commands::eval(a),
        Command::Reproduce(a) => commands::reproduce(a),
    };
    match res {
        Ok(manifest) => {
            println!("{manifest}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
