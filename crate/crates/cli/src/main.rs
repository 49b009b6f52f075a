//! `dinatrace`: simulate, fit and check longitudinal DINA-family models.
//!
//! Exit codes: 0 on success (for fits, converged), 2 when results were
//! written but the chains did not converge, 1 on error.

mod commands;
mod manifest;
mod svg;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{diagnose, fit, metrics, simulate, study, validate};

#[derive(Parser, Debug)]
#[command(name = "dinatrace", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate datasets and truth records from a design file.
    Simulate(simulate::SimulateArgs),
    /// Fit a model by MCMC and write draws and summaries.
    Fit(Box<fit::FitArgs>),
    /// Check the MAP Q-matrix of a fit by PVAF.
    ValidateQ(validate::ValidateArgs),
    /// Recompute convergence diagnostics from chain draw files.
    Diagnose(diagnose::DiagnoseArgs),
    /// Score fits against simulated truth.
    Metrics(metrics::MetricsArgs),
    /// Simulate, fit and score every cell of a design.
    Study(study::StudyArgs),
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DINATRACE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("DINATRACE_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate::run(&a),
        Command::Fit(a) => fit::run(&a),
        Command::ValidateQ(a) => validate::run(&a),
        Command::Diagnose(a) => diagnose::run(&a),
        Command::Metrics(a) => metrics::run(&a),
        Command::Study(a) => study::run(&a),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
