use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde_json::json;

use dinatrace_core::io::write_text;
use dinatrace_core::synthetic::{run_study, DesignCell, StudyOptions};

use super::metrics::recovery_svg;
use super::simulate::{load_design, selected_cells};
use crate::manifest::{hash_file, plan, Plan};

#[derive(Args, Debug)]
pub struct StudyArgs {
    /// Design file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Comma-separated cell names such as n200_j6_sparse.
    #[arg(long, value_delimiter = ',')]
    pub cells: Option<Vec<String>>,
    /// Keep the draws of every replication.
    #[arg(long)]
    pub write_draws: bool,
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: &StudyArgs) -> Result<i32> {
    let design = load_design(&args.config, args.seed)?;
    let cells = selected_cells(&design, args.cells.as_deref())?;
    let names: Vec<String> = cells.iter().map(DesignCell::name).collect();
    let n_reps = args.replications.unwrap_or(design.replications).min(design.replications);
    let mut inputs = BTreeMap::new();
    inputs.insert("design".to_string(), hash_file(&args.config)?);
    let settings = json!({
        "seed": design.seed,
        "replications": n_reps,
        "cells": names,
        "write_draws": args.write_draws,
    });
    let run = match plan(&args.out, "study", settings, inputs, Some(design.seed), args.force)? {
        Plan::UpToDate(code) => {
            eprintln!("{} is up to date", args.out.display());
            return Ok(code);
        }
        Plan::Run(run) => run,
    };
    if run.resumed {
        eprintln!("resuming the unfinished study in {}", args.out.display());
    }
    let options = StudyOptions {
        out: Some(run.dir().to_path_buf()),
        write_draws: args.write_draws,
        replications: Some(n_reps),
        cells: Some(names),
    };
    let reports = run_study(&design, &options)?;
    let mut all_converged = true;
    for report in &reports {
        let name = report.cell.name();
        write_text(&run.dir().join(&name).join("recovery.svg"), &recovery_svg(&name, &report.metrics))?;
        let converged = report
            .replications
            .iter()
            .filter(|r| r.converged(design.fit.rhat_threshold, 200.0))
            .count();
        all_converged &= converged == report.replications.len();
        eprintln!("{name}: {converged} of {} replications converged", report.replications.len());
    }
    run.finish(if all_converged { 0 } else { 2 }, design.warnings.clone())
}
