//! Replicated simulate-fit-score runs over a design grid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{summarize, ChainDiagnostics};
use crate::error::{Error, Result};
use crate::io::{write_draws, write_text};
use crate::model::{validate_dataset, DatasetDimensions, DrawFormat, QMatrixSet, QMode};
use crate::sampler::{fit, posterior_mastery_probabilities, MasteryEstimates, PosteriorDraws};
use crate::structure::map_q_estimate;

use super::design::{DesignCell, SimulationDesign};
use super::generate::{simulate_replication, true_parameters, TruthRecord};
use super::metrics::{aar, bootstrap_se, bootstrap_se_with, parameter_errors, profiles_to_path, q_recovery, QRecovery};

pub const BOOTSTRAP_SAMPLES: usize = 1000;

/// Error of one parameter block in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub block: String,
    /// 1-based time for per-time blocks.
    pub time: Option<usize>,
    pub mae: f64,
    pub rmse: f64,
}

/// Scores of one fitted replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub cell: String,
    pub replication: usize,
    pub seed: u64,
    /// Indexed `time * K + k`.
    pub aar: Vec<f64>,
    pub q_recovery: Vec<QRecovery>,
    pub errors: Vec<BlockError>,
    /// Over non-degenerate parameters excluding Q entries.
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    /// Over every non-degenerate parameter, Q entries included.
    pub max_rhat_all: Option<f64>,
    pub min_ess_all: Option<f64>,
    pub warnings: Vec<String>,
}

impl ReplicationResult {
    pub fn converged(&self, rhat_threshold: f64, min_ess: f64) -> bool {
        matches!((self.max_rhat, self.min_ess), (Some(r), Some(e)) if r < rhat_threshold && e > min_ess)
    }
}

/// One row of a cell's metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub block: Option<String>,
    pub attribute: Option<usize>,
    pub time: Option<usize>,
    pub value: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub cell: DesignCell,
    pub replications: Vec<ReplicationResult>,
    pub metrics: Vec<MetricRow>,
}

#[derive(Debug, Clone, Default)]
pub struct StudyOptions {
    /// Output root; `None` keeps everything in memory.
    pub out: Option<PathBuf>,
    pub write_draws: bool,
    /// Run only the first `n` replications of each cell.
    pub replications: Option<usize>,
    /// Restrict to cells with these names.
    pub cells: Option<Vec<String>>,
}

fn block_of(name: &str) -> Option<(&str, Option<usize>)> {
    let (head, rest) = name.split_once('[')?;
    match head {
        "g" | "s" => {
            let t = rest.trim_end_matches(']').split(',').nth(1)?.parse().ok()?;
            Some((head, Some(t)))
        }
        "beta0" | "betaZ" | "gamma01" | "gamma10" => Some((head, None)),
        _ => None,
    }
}

/// Scores a fit against its truth record.
pub fn score_replication(
    truth: &TruthRecord,
    draws: &PosteriorDraws,
    summaries: &[ChainDiagnostics],
) -> Result<ReplicationResult> {
    let mastery = posterior_mastery_probabilities(draws)?;
    let map = map_q_estimate(draws)?;
    score_estimates(truth, &mastery, &map.q, &map.entry_means, summaries, draws.warnings.clone())
}

/// Scores posterior summaries, as stored in a fit's output files, against
/// a truth record.
pub fn score_estimates(
    truth: &TruthRecord,
    mastery: &MasteryEstimates,
    map_q: &QMatrixSet,
    entry_means: &[f64],
    summaries: &[ChainDiagnostics],
    warnings: Vec<String>,
) -> Result<ReplicationResult> {
    let est_alpha = profiles_to_path(mastery);
    let aar = aar(&est_alpha, &truth.alpha)?;
    let q_rec = q_recovery(map_q, &truth.params.q, Some(entry_means))?;
    let means: BTreeMap<&str, f64> = summaries.iter().map(|d| (d.parameter.as_str(), d.mean)).collect();
    let mut pairs: BTreeMap<(String, Option<usize>), Vec<(f64, f64)>> = BTreeMap::new();
    for (name, value) in truth.named_values() {
        if let (Some(&est), Some((block, time))) = (means.get(name.as_str()), block_of(&name)) {
            pairs.entry((block.to_string(), time)).or_default().push((est, value));
        }
    }
    let errors = pairs
        .into_iter()
        .map(|((block, time), p)| {
            let e = parameter_errors(&p)?;
            Ok(BlockError {
                block,
                time,
                mae: e.mae,
                rmse: e.rmse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let live = |d: &&ChainDiagnostics| !d.degenerate && d.r_hat.is_some_and(f64::is_finite);
    let extremes = |iter: Vec<&ChainDiagnostics>| {
        let max_r = iter.iter().filter_map(|d| d.r_hat).reduce(f64::max);
        let min_e = iter.iter().filter_map(|d| d.ess).reduce(f64::min);
        (max_r, min_e)
    };
    let (max_rhat, min_ess) = extremes(summaries.iter().filter(live).filter(|d| !d.parameter.starts_with("Q[")).collect());
    let (max_rhat_all, min_ess_all) = extremes(summaries.iter().filter(live).collect());
    Ok(ReplicationResult {
        cell: truth.cell.clone(),
        replication: truth.replication,
        seed: truth.seed,
        aar,
        q_recovery: q_rec,
        errors,
        max_rhat,
        min_ess,
        max_rhat_all,
        min_ess_all,
        warnings,
    })
}

/// Simulates, fits and scores one replication.
pub fn run_replication(
    design: &SimulationDesign,
    cell: &DesignCell,
    replication: usize,
    draws_dir: Option<&Path>,
) -> Result<ReplicationResult> {
    let params = true_parameters(design, cell)?;
    let (data, truth) = simulate_replication(design, cell, &params, replication)?;
    let dims = DatasetDimensions::new(
        cell.n_persons,
        cell.n_items,
        cell.n_attributes,
        cell.n_times,
        data.covariates.n_covariates(),
    )?;
    let dataset = validate_dataset(&data.responses, &data.covariates, &dims)?;
    let config = design.fit_config(cell, truth.seed);
    let template = match config.q_mode {
        QMode::Fixed => Some(&params.q),
        QMode::Free | QMode::TimeInvariant => None,
        QMode::Partial => return Err(Error::Design("partial Q mode needs a mask and is not supported in studies".into())),
    };
    let draws = fit(&dataset, &config, template)?;
    if let Some(dir) = draws_dir {
        for chain in &draws.chains {
            write_draws(dir, &draws.names, chain, DrawFormat::Jsonl)?;
        }
    }
    let summaries = summarize(&draws, config.ci_level)?;
    score_replication(&truth, &draws, &summaries)
}

fn opt_mean(values: impl Iterator<Item = Option<f64>>) -> Option<Vec<f64>> {
    values.collect()
}

/// Aggregates replications into metric rows with bootstrap standard errors.
/// `results` must be sorted by replication.
pub fn aggregate(
    design: &SimulationDesign,
    cell: &DesignCell,
    results: &[ReplicationResult],
) -> Result<Vec<MetricRow>> {
    if results.is_empty() {
        return Err(Error::TooFewReplications(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(design.cell_seed(cell, "bootstrap"));
    let r = results.len();
    let mut rows = Vec::new();
    let mut push = |metric: &str, block: Option<&str>, attribute: Option<usize>, time: Option<usize>, values: &[f64], rmse: bool, rng: &mut ChaCha8Rng| -> Result<()> {
        // RMSE pools squared errors across replications
        let (value, se) = if rmse {
            let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
            let stat = |s: &[f64]| (s.iter().sum::<f64>() / s.len() as f64).sqrt();
            (stat(&sq), if r >= 2 { Some(bootstrap_se_with(&sq, BOOTSTRAP_SAMPLES, rng, stat)?) } else { None })
        } else {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            (mean, if r >= 2 { Some(bootstrap_se(values, BOOTSTRAP_SAMPLES, rng)?) } else { None })
        };
        rows.push(MetricRow {
            metric: metric.to_string(),
            block: block.map(String::from),
            attribute,
            time,
            value,
            se,
        });
        Ok(())
    };
    let (k, t) = (cell.n_attributes, cell.n_times);
    for tt in 0..t {
        for kk in 0..k {
            let v: Vec<f64> = results.iter().map(|x| x.aar[tt * k + kk]).collect();
            push("aar", None, Some(kk + 1), Some(tt + 1), &v, false, &mut rng)?;
        }
    }
    for tt in 0..t {
        let q: Vec<QRecovery> = results.iter().map(|x| x.q_recovery[tt]).collect();
        let fields: [(&str, Vec<Option<f64>>); 5] = [
            ("q_accuracy", q.iter().map(|x| Some(x.accuracy)).collect()),
            ("q_fnr", q.iter().map(|x| Some(x.fnr)).collect()),
            ("q_fpr", q.iter().map(|x| Some(x.fpr)).collect()),
            ("q_pm1", q.iter().map(|x| x.pm1).collect()),
            ("q_pm0", q.iter().map(|x| x.pm0).collect()),
        ];
        for (name, vals) in fields {
            if let Some(v) = opt_mean(vals.into_iter()) {
                push(name, None, None, Some(tt + 1), &v, false, &mut rng)?;
            }
        }
    }
    let blocks: Vec<(String, Option<usize>)> = results[0].errors.iter().map(|e| (e.block.clone(), e.time)).collect();
    for (block, time) in blocks {
        let pick = |f: fn(&BlockError) -> f64| -> Result<Vec<f64>> {
            results
                .iter()
                .map(|x| {
                    x.errors
                        .iter()
                        .find(|e| e.block == block && e.time == time)
                        .map(f)
                        .ok_or_else(|| Error::Shape(format!("replication {} lacks block {block}", x.replication)))
                })
                .collect()
        };
        push("mae", Some(&block), None, time, &pick(|e| e.mae)?, false, &mut rng)?;
        push("rmse", Some(&block), None, time, &pick(|e| e.rmse)?, true, &mut rng)?;
    }
    let conv: Vec<f64> = results
        .iter()
        .map(|x| x.converged(design.fit.rhat_threshold, 200.0) as u8 as f64)
        .collect();
    push("converged_share", None, None, None, &conv, false, &mut rng)?;
    if let Some(v) = opt_mean(results.iter().map(|x| x.max_rhat)) {
        push("max_rhat", None, None, None, &v, false, &mut rng)?;
    }
    if let Some(v) = opt_mean(results.iter().map(|x| x.min_ess)) {
        push("min_ess", None, None, None, &v, false, &mut rng)?;
    }
    Ok(rows)
}

pub const METRICS_HEADER: &str = "metric,block,attribute,time,value,se,replications";

pub fn format_metrics(rows: &[MetricRow], replications: usize) -> String {
    let na = |v: Option<String>| v.unwrap_or_else(|| "NA".into());
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.metric,
            na(r.block.clone()),
            na(r.attribute.map(|v| v.to_string())),
            na(r.time.map(|v| v.to_string())),
            r.value,
            na(r.se.map(|v| v.to_string())),
            replications
        ));
    }
    out
}

fn replication_path(root: &Path, cell: &str, rep: usize) -> PathBuf {
    root.join(cell).join("reps").join(format!("rep{rep:04}.json"))
}

fn load_replication(path: &Path) -> Option<ReplicationResult> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Runs every selected cell. Finished replications found under the output
/// root are reused, so an interrupted study resumes where it stopped.
pub fn run_study(design: &SimulationDesign, options: &StudyOptions) -> Result<Vec<CellReport>> {
    let n_reps = options.replications.unwrap_or(design.replications).min(design.replications);
    let cells: Vec<DesignCell> = design
        .cells()
        .into_iter()
        .filter(|c| options.cells.as_ref().is_none_or(|names| names.contains(&c.name())))
        .collect();
    if cells.is_empty() {
        return Err(Error::Design("no design cell selected".into()));
    }
    let mut reports = Vec::with_capacity(cells.len());
    for cell in cells {
        let name = cell.name();
        let results = (0..n_reps)
            .into_par_iter()
            .map(|rep| {
                let saved = options.out.as_ref().map(|root| replication_path(root, &name, rep));
                if let Some(found) = saved.as_deref().and_then(load_replication) {
                    return Ok(found);
                }
                let draws_dir = match (&options.out, options.write_draws) {
                    (Some(root), true) => Some(root.join("draws").join(&name).join(rep.to_string())),
                    _ => None,
                };
                let result = run_replication(design, &cell, rep, draws_dir.as_deref())?;
                if let Some(path) = saved {
                    let text = serde_json::to_string_pretty(&result).map_err(|e| Error::parse(&path, e))?;
                    write_text(&path, &text)?;
                }
                Ok(result)
            })
            .collect::<Result<Vec<_>>>()?;
        let metrics = aggregate(design, &cell, &results)?;
        if let Some(root) = &options.out {
            write_text(&root.join(&name).join("metrics.csv"), &format_metrics(&metrics, results.len()))?;
        }
        reports.push(CellReport {
            cell,
            replications: results,
            metrics,
        });
    }
    Ok(reports)
}
