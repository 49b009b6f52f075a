use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde_json::json;

use dinatrace_core::diagnostics::{summarize, ChainDiagnostics};
use dinatrace_core::dynamics::coefficients_to_odds_ratios;
use dinatrace_core::io::{
    read_covariates, read_mask, read_q, read_responses, write_alpha_trace, write_diagnostics, write_draws,
    write_item_success, write_mastery, write_odds_ratios, write_pattern_distribution, write_q,
    write_q_posterior_means, write_q_row_frequencies, write_text,
};
use dinatrace_core::model::{
    standardize_covariates, validate_dataset, CovariateMatrix, DatasetDimensions, DrawFormat, FitConfig, LossMode,
    MeasurementModel, QMatrixSet, QMode,
};
use dinatrace_core::sampler::{fit, posterior_mastery_probabilities, PosteriorDraws};
use dinatrace_core::structure::map_q_estimate;

use crate::manifest::{hash_file, plan, Plan};
use crate::svg;

/// Parses a kebab-case flag value into a snake_case serde enum.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| format!("unknown value `{s}`"))
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected A,B")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    Ok((a, b))
}

/// Sampler settings; each overrides the config file when given.
#[derive(Args, Debug, Clone, Default)]
pub struct SamplerFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Warm-up sweeps per chain.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Kept draws per chain.
    #[arg(long)]
    pub keep: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// free, fixed, partial or time-invariant.
    #[arg(long, value_parser = parse_enum::<QMode>)]
    pub q_mode: Option<QMode>,
    /// free, soft-monotone or absorbing.
    #[arg(long, value_parser = parse_enum::<LossMode>)]
    pub loss_mode: Option<LossMode>,
    /// dina, dino or gdina.
    #[arg(long, value_parser = parse_enum::<MeasurementModel>)]
    pub measurement: Option<MeasurementModel>,
    /// Beta prior shapes for the Q-entry inclusion probability.
    #[arg(long, value_parser = parse_pair, value_name = "A,B")]
    pub theta_prior: Option<(f64, f64)>,
    #[arg(long, value_name = "N")]
    pub min_items_per_attr: Option<usize>,
    /// jsonl or csv.
    #[arg(long, value_parser = parse_enum::<DrawFormat>)]
    pub draw_format: Option<DrawFormat>,
    #[arg(long)]
    pub rhat_threshold: Option<f64>,
    /// Metropolis steps per regression block per sweep.
    #[arg(long)]
    pub regression_steps: Option<usize>,
    /// Keep g < 1 - s for every item.
    #[arg(long)]
    pub monotone_items: bool,
    /// Write the full attribute path of every kept draw.
    #[arg(long)]
    pub record_alpha: bool,
}

impl SamplerFlags {
    pub fn apply(&self, c: &mut FitConfig) {
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = self.$flag {
                    c.$field = v;
                }
            };
        }
        set!(seed => seed);
        set!(chains => n_chains);
        set!(warmup => n_warmup);
        set!(keep => n_kept);
        set!(thin => thin);
        set!(q_mode => q_mode);
        set!(loss_mode => loss_mode);
        set!(measurement => measurement_model);
        set!(theta_prior => theta_prior);
        set!(min_items_per_attr => identifiability_min_items_per_attribute);
        set!(draw_format => draw_format);
        set!(rhat_threshold => rhat_threshold);
        set!(regression_steps => regression_steps);
        c.monotone_items |= self.monotone_items;
        c.record_alpha_trace |= self.record_alpha;
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Long-format responses: person,item,time,response.
    #[arg(long)]
    pub responses: PathBuf,
    /// Wide-format covariates: person,<name>...
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Q-matrix CSV: item,time,attr1..attrK.
    #[arg(long)]
    pub q: Option<PathBuf>,
    /// Entry mask for partial mode: item,time,attr1..attrK with 0, 1 or free.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Number of attributes; taken from the Q-matrix when one is given.
    #[arg(long)]
    pub attributes: Option<usize>,
    /// TOML file with sampler settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Standardize every covariate column.
    #[arg(long)]
    pub standardize: bool,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[arg(long)]
    pub out: PathBuf,
    /// Rerun even when the output is up to date.
    #[arg(long)]
    pub force: bool,
}

pub fn load_fit_config(path: &Path) -> Result<FitConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_q(args: &FitArgs, config: &FitConfig, n_times: usize) -> Result<Option<QMatrixSet>> {
    let ti = config.q_mode == QMode::TimeInvariant;
    let q = args.q.as_deref().map(|p| read_q(p, Some(n_times), ti)).transpose()?;
    Ok(match (config.q_mode, q) {
        (QMode::Fixed, None) => bail!("--q-mode fixed needs --q"),
        (QMode::Partial, Some(q)) => {
            let mask = args.mask.as_deref().context("--q-mode partial needs --mask")?;
            Some(q.with_mask(&read_mask(mask, n_times)?)?)
        }
        (QMode::Partial, None) => bail!("--q-mode partial needs --q and --mask"),
        (_, q) => q,
    })
}

/// Maximum R-hat over non-degenerate parameters other than Q entries, and
/// whether it is below the threshold. Without a computable R-hat the run
/// counts as not converged.
pub fn convergence(summaries: &[ChainDiagnostics], threshold: f64) -> (Option<f64>, bool) {
    let live: Vec<_> = summaries
        .iter()
        .filter(|d| !d.degenerate && !d.parameter.starts_with("Q["))
        .collect();
    if live.is_empty() || live.iter().any(|d| d.r_hat.is_none_or(|r| !r.is_finite())) {
        return (None, false);
    }
    let max = live.iter().filter_map(|d| d.r_hat).fold(f64::NEG_INFINITY, f64::max);
    (Some(max), max < threshold)
}

/// Covariate slopes of the three regressions on the odds scale.
fn odds_ratio_rows(summaries: &[ChainDiagnostics]) -> Vec<(String, f64, f64, f64)> {
    summaries
        .iter()
        .filter(|d| {
            let Some((head, rest)) = d.parameter.split_once('[') else {
                return false;
            };
            let covariate = rest.trim_end_matches(']').rsplit(',').next().and_then(|c| c.parse::<usize>().ok());
            match head {
                "betaZ" => true,
                "gamma01" | "gamma10" => covariate.is_some_and(|c| c > 0),
                _ => false,
            }
        })
        .map(|d| (d.parameter.clone(), d.mean, d.ci_lo, d.ci_hi))
        .collect()
}

fn acceptance_csv(draws: &PosteriorDraws) -> String {
    let mut out = String::from("chain,regression,attribute,warmup_rate,sampling_rate\n");
    for c in &draws.chains {
        for a in &c.acceptance {
            let kind = serde_json::to_value(a.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            out.push_str(&format!(
                "{},{kind},{},{},{}\n",
                c.chain,
                a.attribute + 1,
                a.warmup_rate,
                a.sampling_rate
            ));
        }
    }
    out
}

/// Trace panels for the parameters with the largest R-hat.
fn trace_svg(draws: &PosteriorDraws, summaries: &[ChainDiagnostics], n: usize) -> String {
    let mut ranked: Vec<(usize, f64)> = summaries
        .iter()
        .enumerate()
        .filter(|(_, d)| !d.degenerate && !d.parameter.starts_with("Q["))
        .map(|(i, d)| (i, d.r_hat.unwrap_or(f64::NAN)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let panels: Vec<String> = ranked
        .iter()
        .take(n)
        .map(|&(i, r)| {
            let title = format!("{}  R-hat {:.3}", summaries[i].parameter, r);
            svg::line_panel(&title, &draws.trace(i))
        })
        .collect();
    svg::document(&panels)
}

pub fn run(args: &FitArgs) -> Result<i32> {
    let mut config = match &args.config {
        Some(p) => load_fit_config(p)?,
        None => FitConfig::default(),
    };
    args.sampler.apply(&mut config);
    config.validate()?;
    let mut inputs = BTreeMap::new();
    inputs.insert("responses".to_string(), hash_file(&args.responses)?);
    for (label, path) in [("covariates", &args.covariates), ("q", &args.q), ("mask", &args.mask)] {
        if let Some(p) = path {
            inputs.insert(label.to_string(), hash_file(p)?);
        }
    }
    let settings = json!({
        "fit": config,
        "attributes": args.attributes,
        "standardize": args.standardize,
    });
    let run = match plan(&args.out, "fit", settings, inputs, Some(config.seed), args.force)? {
        Plan::UpToDate(code) => {
            eprintln!("{} is up to date", args.out.display());
            return Ok(code);
        }
        Plan::Run(run) => run,
    };

    let panel = read_responses(&args.responses)?;
    let (n, j, t) = panel.shape();
    let mut cov = match &args.covariates {
        Some(p) => read_covariates(p)?,
        None => CovariateMatrix::new(n, Vec::new(), Vec::new())?,
    };
    if args.standardize {
        let all: Vec<usize> = (0..cov.n_covariates()).collect();
        cov = standardize_covariates(&cov, &all)?;
    }
    let q = load_q(args, &config, t)?;
    let k = match (&q, args.attributes) {
        (Some(q), Some(k)) if q.n_attributes() != k => {
            bail!("--attributes {k} disagrees with the Q-matrix ({} attributes)", q.n_attributes())
        }
        (Some(q), _) => q.n_attributes(),
        (None, Some(k)) => k,
        (None, None) => bail!("--attributes is required without --q"),
    };
    let dims = DatasetDimensions::new(n, j, k, t, cov.n_covariates())?;
    let dataset = validate_dataset(&panel, &cov, &dims)?;
    let draws = fit(&dataset, &config, q.as_ref())?;

    let dir = run.dir().to_path_buf();
    let draws_dir = dir.join("draws");
    for chain in &draws.chains {
        write_draws(&draws_dir, &draws.names, chain, config.draw_format)?;
        if config.record_alpha_trace {
            write_alpha_trace(&draws_dir.join(format!("alpha_chain{}.csv", chain.chain)), chain, n, t)?;
        }
    }
    let summaries = summarize(&draws, config.ci_level)?;
    write_diagnostics(&dir.join("diagnostics.csv"), &summaries)?;
    write_mastery(&dir.join("mastery.csv"), &posterior_mastery_probabilities(&draws)?)?;
    let map = map_q_estimate(&draws)?;
    write_q(&dir.join("map_q.csv"), &map.q)?;
    write_q_posterior_means(&dir.join("q_pm.csv"), &map)?;
    write_q_row_frequencies(&dir.join("q_rows.csv"), &map)?;
    write_odds_ratios(&dir.join("odds_ratios.csv"), &coefficients_to_odds_ratios(&odds_ratio_rows(&summaries)))?;
    write_item_success(&dir.join("item_success.csv"), &draws.item_success(), j, k)?;
    write_pattern_distribution(&dir.join("pattern_dist.csv"), &draws.pattern_distribution(), k)?;
    write_text(&dir.join("acceptance.csv"), &acceptance_csv(&draws))?;
    write_text(&dir.join("traces.svg"), &trace_svg(&draws, &summaries, 6))?;

    for w in &draws.warnings {
        eprintln!("warning: {w}");
    }
    let (max_rhat, converged) = convergence(&summaries, config.rhat_threshold);
    match max_rhat {
        Some(r) => eprintln!("max R-hat {r:.4} (threshold {})", config.rhat_threshold),
        None => eprintln!("R-hat not available; treating the run as not converged"),
    }
    run.finish(if converged { 0 } else { 2 }, draws.warnings.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(name: &str, r: Option<f64>, degenerate: bool) -> ChainDiagnostics {
        ChainDiagnostics {
            parameter: name.into(),
            mean: 0.0,
            ci_lo: -1.0,
            ci_hi: 1.0,
            r_hat: r,
            ess: Some(100.0),
            degenerate,
        }
    }

    #[test]
    fn flag_values_parse() {
        assert_eq!(parse_enum::<QMode>("time-invariant"), Ok(QMode::TimeInvariant));
        assert_eq!(parse_enum::<LossMode>("soft-monotone"), Ok(LossMode::SoftMonotone));
        assert_eq!(parse_enum::<MeasurementModel>("gdina"), Ok(MeasurementModel::Gdina));
        assert!(parse_enum::<QMode>("sometimes").is_err());
        assert_eq!(parse_pair("2, 8"), Ok((2.0, 8.0)));
        assert!(parse_pair("2").is_err());
    }

    #[test]
    fn flags_override_config() {
        let flags = SamplerFlags {
            chains: Some(2),
            theta_prior: Some((3.0, 7.0)),
            record_alpha: true,
            ..Default::default()
        };
        let mut c = FitConfig::default();
        flags.apply(&mut c);
        assert_eq!((c.n_chains, c.theta_prior, c.record_alpha_trace), (2, (3.0, 7.0), true));
        assert_eq!(c.n_warmup, FitConfig::default().n_warmup);
    }

    #[test]
    fn convergence_ignores_q_and_degenerate_entries() {
        let rows = vec![
            diag("g[1,1]", Some(1.02), false),
            diag("Q[1,1,1]", Some(5.0), false),
            diag("theta", None, true),
        ];
        assert_eq!(convergence(&rows, 1.1), (Some(1.02), true));
        assert_eq!(convergence(&rows, 1.01), (Some(1.02), false));
        assert_eq!(convergence(&[diag("g[1,1]", None, false)], 1.1), (None, false));
    }

    #[test]
    fn odds_ratios_cover_slopes_only() {
        let rows: Vec<_> = ["beta0[1]", "betaZ[1,1]", "gamma01[1,0]", "gamma01[1,1]", "gamma10[2,2]", "g[1,1]"]
            .iter()
            .map(|n| diag(n, Some(1.0), false))
            .collect();
        let names: Vec<_> = odds_ratio_rows(&rows).into_iter().map(|r| r.0).collect();
        assert_eq!(names, vec!["betaZ[1,1]", "gamma01[1,1]", "gamma10[2,2]"]);
    }
}
