use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::json;

use dinatrace_core::io::{read_diagnostics, read_mastery, read_q, read_q_posterior_means, write_text};
use dinatrace_core::synthetic::{aggregate, format_metrics, score_estimates, MetricRow, ReplicationResult, TruthRecord};

use super::simulate::load_design;
use crate::manifest::{hash_file, plan, Plan, RunManifest, MANIFEST};
use crate::svg;

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Design file the truth was simulated from.
    #[arg(long)]
    pub config: PathBuf,
    /// Output root of `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Fit output directories, in any order.
    #[arg(long, num_args = 1.., required = true)]
    pub fits: Vec<PathBuf>,
    /// Must match the seed given to `simulate`, if any.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Truth records below `root`, keyed by the hash of their responses file.
fn index_truth(root: &Path) -> Result<BTreeMap<String, PathBuf>> {
    fn walk(dir: &Path, out: &mut BTreeMap<String, PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.file_name().is_some_and(|n| n == "truth.json") {
                let dir = path.parent().expect("file has a parent");
                out.insert(hash_file(&dir.join("responses.csv"))?, dir.to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, &mut out)?;
    if out.is_empty() {
        bail!("no truth records under {}", root.display());
    }
    Ok(out)
}

fn read_truth(dir: &Path) -> Result<TruthRecord> {
    let path = dir.join("truth.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Scores one fit directory against the truth it was fitted to.
fn score_fit(fit: &Path, truth_index: &BTreeMap<String, PathBuf>) -> Result<(TruthRecord, ReplicationResult, String)> {
    let manifest_path = fit.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .with_context(|| format!("{} has no run manifest", fit.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
    if manifest.command != "fit" || manifest.exit_code.is_none() {
        bail!("{} is not a finished fit", fit.display());
    }
    let key = manifest.inputs.get("responses").context("fit manifest lacks a responses hash")?;
    let truth_dir = truth_index
        .get(key)
        .with_context(|| format!("no truth record matches the responses fitted in {}", fit.display()))?;
    let truth = read_truth(truth_dir)?;
    let t = truth.params.q.n_times();
    let mastery = read_mastery(&fit.join("mastery.csv"))?;
    let map_q = read_q(&fit.join("map_q.csv"), Some(t), false)?;
    let (_, _, _, means) = read_q_posterior_means(&fit.join("q_pm.csv"))?;
    let summaries = read_diagnostics(&fit.join("diagnostics.csv"))?;
    let result = score_estimates(&truth, &mastery, &map_q, &means, &summaries, manifest.warnings.clone())
        .with_context(|| format!("scoring {}", fit.display()))?;
    Ok((truth, result, hash_file(&manifest_path)?))
}

/// Bar panels of AAR per time point and Q accuracy.
pub fn recovery_svg(cell: &str, rows: &[MetricRow]) -> String {
    let mut panels = Vec::new();
    let times: Vec<usize> = {
        let mut t: Vec<usize> = rows.iter().filter(|r| r.metric == "aar").filter_map(|r| r.time).collect();
        t.dedup();
        t
    };
    for t in times {
        let aar: Vec<&MetricRow> = rows.iter().filter(|r| r.metric == "aar" && r.time == Some(t)).collect();
        let labels: Vec<String> = aar.iter().map(|r| format!("attr {}", r.attribute.unwrap_or(0))).collect();
        let values: Vec<f64> = aar.iter().map(|r| r.value).collect();
        panels.push(svg::bar_panel(&format!("{cell}: AAR at time {t}"), &labels, &values, (0.5, 1.0), None));
    }
    let acc: Vec<&MetricRow> = rows.iter().filter(|r| r.metric == "q_accuracy").collect();
    if !acc.is_empty() {
        let labels: Vec<String> = acc.iter().map(|r| format!("time {}", r.time.unwrap_or(0))).collect();
        let values: Vec<f64> = acc.iter().map(|r| r.value).collect();
        panels.push(svg::bar_panel(&format!("{cell}: Q accuracy"), &labels, &values, (0.5, 1.0), None));
    }
    svg::document(&panels)
}

pub fn run(args: &MetricsArgs) -> Result<i32> {
    let design = load_design(&args.config, args.seed)?;
    let truth_index = index_truth(&args.truth)?;
    let mut by_cell: BTreeMap<String, Vec<ReplicationResult>> = BTreeMap::new();
    let mut inputs = BTreeMap::new();
    inputs.insert("design".to_string(), hash_file(&args.config)?);
    for fit in &args.fits {
        let (truth, result, manifest_hash) = score_fit(fit, &truth_index)?;
        let label = format!("fit:{}/{}", truth.cell, truth.replication + 1);
        if inputs.insert(label, manifest_hash).is_some() {
            bail!("replication {} of {} is fitted twice", truth.replication + 1, truth.cell);
        }
        by_cell.entry(truth.cell.clone()).or_default().push(result);
    }
    let settings = json!({ "seed": design.seed });
    let run = match plan(&args.out, "metrics", settings, inputs, Some(design.seed), args.force)? {
        Plan::UpToDate(code) => {
            eprintln!("{} is up to date", args.out.display());
            return Ok(code);
        }
        Plan::Run(run) => run,
    };
    let cells = design.cells();
    for (name, mut results) in by_cell {
        let cell = cells
            .iter()
            .find(|c| c.name() == name)
            .with_context(|| format!("cell {name} is not in the design"))?;
        results.sort_by_key(|r| r.replication);
        let rows = aggregate(&design, cell, &results)?;
        let dir = run.dir().join(&name);
        write_text(&dir.join("metrics.csv"), &format_metrics(&rows, results.len()))?;
        write_text(&dir.join("recovery.svg"), &recovery_svg(&name, &rows))?;
    }
    run.finish(0, Vec::new())
}
