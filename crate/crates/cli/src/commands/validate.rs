use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;

use dinatrace_core::io::{format_q_validation, read_item_success, read_pattern_distribution, read_q, write_q_validation};
use dinatrace_core::structure::{validate_q, AttributePatternDistribution, QValidationReport, PVAF_THRESHOLD};

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Output directory of a fit.
    #[arg(long)]
    pub fit: PathBuf,
    /// Rows whose PVAF falls below this are flagged.
    #[arg(long, default_value_t = PVAF_THRESHOLD)]
    pub threshold: f64,
    /// Report path; defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn validate_fit_dir(args: &ValidateArgs) -> Result<(QValidationReport, usize)> {
    let need = |name: &str| {
        let p = args.fit.join(name);
        if !p.is_file() {
            bail!("{} is missing; is {} a fit directory?", p.display(), args.fit.display());
        }
        Ok(p)
    };
    let (j, t, k, success) = read_item_success(&need("item_success.csv")?)?;
    let q = read_q(&need("map_q.csv")?, Some(t), false)?;
    if (q.n_items(), q.n_attributes()) != (j, k) {
        bail!("map_q.csv and item_success.csv disagree in shape");
    }
    let dists = read_pattern_distribution(&need("pattern_dist.csv")?)?
        .iter()
        .map(|w| AttributePatternDistribution::normalized(w))
        .collect::<dinatrace_core::Result<Vec<_>>>()?;
    Ok((validate_q(&q, &success, &dists, args.threshold)?, k))
}

pub fn run(args: &ValidateArgs) -> Result<i32> {
    let (report, k) = validate_fit_dir(args)?;
    for e in report.entries.iter().filter(|e| e.degenerate) {
        eprintln!(
            "warning: item {} at time {} has flat success probabilities; PVAF is set to 0",
            e.item + 1,
            e.time + 1
        );
    }
    match &args.out {
        Some(path) => write_q_validation(path, &report, k)?,
        None => print!("{}", format_q_validation(&report, k)),
    }
    let flagged = report.entries.iter().filter(|e| e.pvaf_below_threshold).count();
    eprintln!("{flagged} of {} rows flagged", report.entries.len());
    Ok(0)
}
