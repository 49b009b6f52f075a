use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde_json::json;

use dinatrace_core::io::{write_covariates, write_q, write_responses, write_text};
use dinatrace_core::synthetic::{simulate_replication, true_parameters, DesignCell, SimulationDesign};

use crate::manifest::{hash_file, plan, Plan};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Design file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the design seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generate only the first N replications of each cell.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Comma-separated cell names such as n200_j6_sparse.
    #[arg(long, value_delimiter = ',')]
    pub cells: Option<Vec<String>>,
    #[arg(long)]
    pub force: bool,
}

/// Directory of one replication below a simulate or study root.
pub fn replication_dir(root: &Path, cell: &str, replication: usize) -> PathBuf {
    root.join(cell).join(format!("rep{:03}", replication + 1))
}

pub fn load_design(path: &Path, seed: Option<u64>) -> Result<SimulationDesign> {
    let mut design = SimulationDesign::load(path)?;
    if let Some(s) = seed {
        design.seed = s;
    }
    for w in &design.warnings {
        eprintln!("warning: {w}");
    }
    Ok(design)
}

pub fn selected_cells(design: &SimulationDesign, names: Option<&[String]>) -> Result<Vec<DesignCell>> {
    let cells: Vec<_> = design
        .cells()
        .into_iter()
        .filter(|c| names.is_none_or(|n| n.contains(&c.name())))
        .collect();
    if cells.is_empty() {
        anyhow::bail!("no design cell selected");
    }
    Ok(cells)
}

pub fn run(args: &SimulateArgs) -> Result<i32> {
    let design = load_design(&args.config, args.seed)?;
    let cells = selected_cells(&design, args.cells.as_deref())?;
    let n_reps = args.replications.unwrap_or(design.replications).min(design.replications);
    let mut inputs = BTreeMap::new();
    inputs.insert("design".to_string(), hash_file(&args.config)?);
    for (key, path) in &design.q_files {
        let base = args.config.parent().unwrap_or(Path::new("."));
        inputs.insert(format!("q:{key}"), hash_file(&base.join(path))?);
    }
    let settings = json!({
        "seed": design.seed,
        "replications": n_reps,
        "cells": cells.iter().map(DesignCell::name).collect::<Vec<_>>(),
    });
    let run = match plan(&args.out, "simulate", settings, inputs, Some(design.seed), args.force)? {
        Plan::UpToDate(code) => {
            eprintln!("{} is up to date", args.out.display());
            return Ok(code);
        }
        Plan::Run(run) => run,
    };
    for cell in &cells {
        let params = true_parameters(&design, cell)?;
        for rep in 0..n_reps {
            let (data, truth) = simulate_replication(&design, cell, &params, rep)?;
            let dir = replication_dir(run.dir(), &cell.name(), rep);
            write_responses(&dir.join("responses.csv"), &data.responses)?;
            write_covariates(&dir.join("covariates.csv"), &data.covariates)?;
            write_q(&dir.join("q_true.csv"), &params.q)?;
            let text = serde_json::to_string_pretty(&truth).context("serializing truth record")? + "\n";
            write_text(&dir.join("truth.json"), &text)?;
        }
    }
    run.finish(0, design.warnings.clone())
}
