use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use dinatrace_core::diagnostics::{summarize_rows, ChainDiagnostics};
use dinatrace_core::io::{format_diagnostics, read_draws, write_diagnostics, DrawTable};

use super::fit::convergence;

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// A fit directory or a directory of chain draw files.
    #[arg(long)]
    pub draws: PathBuf,
    /// Credible interval level.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1.1)]
    pub rhat_threshold: f64,
    /// Report path; defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Chain files in `dir` ordered by chain number.
pub fn chain_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(rest) = name.strip_prefix("chain") else { continue };
        let Some((num, ext)) = rest.split_once('.') else { continue };
        if let (Ok(c), "jsonl" | "csv") = (num.parse::<usize>(), ext) {
            found.push((c, path));
        }
    }
    found.sort();
    if found.is_empty() {
        bail!("no chain draw files in {}", dir.display());
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn diagnose_dir(dir: &Path, level: f64) -> Result<Vec<ChainDiagnostics>> {
    let dir = if dir.join("draws").is_dir() { dir.join("draws") } else { dir.to_path_buf() };
    let tables: Vec<DrawTable> = chain_files(&dir)?
        .iter()
        .map(|p| read_draws(p))
        .collect::<dinatrace_core::Result<_>>()?;
    if tables.iter().any(|t| t.names != tables[0].names) {
        bail!("chain files in {} have different columns", dir.display());
    }
    let rows: Vec<&[Vec<f64>]> = tables.iter().map(|t| t.values.as_slice()).collect();
    Ok(summarize_rows(&tables[0].names, &rows, level)?)
}

pub fn run(args: &DiagnoseArgs) -> Result<i32> {
    let summaries = diagnose_dir(&args.draws, args.level)?;
    match &args.out {
        Some(path) => write_diagnostics(path, &summaries)?,
        None => print!("{}", format_diagnostics(&summaries)),
    }
    let (max_rhat, converged) = convergence(&summaries, args.rhat_threshold);
    if let Some(r) = max_rhat {
        eprintln!("max R-hat {r:.4} (threshold {})", args.rhat_threshold);
    }
    Ok(if converged { 0 } else { 2 })
}
