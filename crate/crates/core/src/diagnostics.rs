//! Convergence diagnostics and posterior summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;

/// A diagnostic value; `degenerate` traces carry `NaN`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub value: f64,
    pub degenerate: bool,
}

impl Diagnostic {
    fn degenerate() -> Self {
        Diagnostic {
            value: f64::NAN,
            degenerate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub parameter: String,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `None` with a single chain.
    pub r_hat: Option<f64>,
    pub ess: Option<f64>,
    pub degenerate: bool,
}

impl ChainDiagnostics {
    /// Value for the report's `flag` column.
    pub fn flag(&self) -> &'static str {
        if self.degenerate {
            "degenerate"
        } else if self.r_hat.is_none() {
            "single_chain"
        } else {
            "ok"
        }
    }
}

fn check_traces(traces: &[&[f64]]) -> Result<()> {
    if traces.len() < 2 {
        return Err(Error::Shape(format!("need at least 2 chains, got {}", traces.len())));
    }
    let n = traces[0].len();
    if n < 4 {
        return Err(Error::Shape(format!("need at least 4 draws per chain, got {n}")));
    }
    if traces.iter().any(|t| t.len() != n) {
        return Err(Error::Shape("chains differ in length".into()));
    }
    Ok(())
}

fn is_constant(traces: &[&[f64]]) -> bool {
    let first = traces[0][0];
    traces.iter().all(|t| t.iter().all(|&x| x == first))
}

/// Average ranks (1-based) of `values`.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Splits each chain in half (dropping the middle draw of odd-length chains)
/// and replaces draws by normal scores of their pooled average ranks.
fn split_rank_normalized(traces: &[&[f64]]) -> Vec<Vec<f64>> {
    let half = traces[0].len() / 2;
    let n = traces[0].len();
    let mut halves: Vec<&[f64]> = Vec::with_capacity(traces.len() * 2);
    for t in traces {
        halves.push(&t[..half]);
        halves.push(&t[n - half..]);
    }
    let pooled: Vec<f64> = halves.iter().flat_map(|h| h.iter().copied()).collect();
    let ranks = average_ranks(&pooled);
    let s = pooled.len() as f64;
    let normal = Normal::standard();
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / (s + 0.25)))
        .collect();
    z.chunks(half).map(|c| c.to_vec()).collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn rhat_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains.iter().map(|c| sample_var(c)).sum::<f64>() / m;
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Split R-hat on the raw draws, without rank normalization.
pub fn split_rhat_classic(traces: &[&[f64]]) -> Result<Diagnostic> {
    check_traces(traces)?;
    if is_constant(traces) {
        return Ok(Diagnostic::degenerate());
    }
    let half = traces[0].len() / 2;
    let n = traces[0].len();
    let halves: Vec<Vec<f64>> = traces
        .iter()
        .flat_map(|t| [t[..half].to_vec(), t[n - half..].to_vec()])
        .collect();
    Ok(Diagnostic {
        value: rhat_of(&halves),
        degenerate: false,
    })
}

/// Rank-normalized split R-hat.
///
/// Being rank based, the statistic is bounded: two completely separated
/// chains give about 1.8 however far apart they are.
pub fn split_rhat(traces: &[&[f64]]) -> Result<Diagnostic> {
    check_traces(traces)?;
    if is_constant(traces) {
        return Ok(Diagnostic::degenerate());
    }
    Ok(Diagnostic {
        value: rhat_of(&split_rank_normalized(traces)),
        degenerate: false,
    })
}

fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n - lag {
        s += (x[i] - m) * (x[i + lag] - m);
    }
    s / n as f64
}

fn ess_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let mean_acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let mean_var = mean_acov(0) * n as f64 / (n as f64 - 1.0);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;

    let mut r = vec![0.0; n];
    r[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    r[1] = odd;
    let mut t = 0;
    while t + 5 < n && (even + odd).is_finite() && even + odd > 0.0 {
        t += 2;
        even = rho(t);
        odd = rho(t + 1);
        if even + odd >= 0.0 {
            r[t] = even;
            r[t + 1] = odd;
        }
    }
    let max_t = t;
    if even > 0.0 {
        r[max_t] = even;
    }
    let mut t = 0;
    while t + 4 <= max_t {
        t += 2;
        if r[t] + r[t + 1] > r[t - 2] + r[t - 1] {
            r[t] = (r[t - 2] + r[t - 1]) / 2.0;
            r[t + 1] = r[t];
        }
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * r[..max_t].iter().sum::<f64>() + r[max_t]).max(1.0 / total.log10());
    total / tau
}

/// Bulk effective sample size on rank-normalized split chains, using Geyer's
/// initial monotone sequence. The autocorrelation time is floored at
/// `1 / log10(S)` so the estimate never exceeds `S * log10(S)` for S draws.
pub fn ess_bulk(traces: &[&[f64]]) -> Result<Diagnostic> {
    check_traces(traces)?;
    if is_constant(traces) {
        return Ok(Diagnostic::degenerate());
    }
    Ok(Diagnostic {
        value: ess_of(&split_rank_normalized(traces)),
        degenerate: false,
    })
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pooled summary of one parameter.
pub fn summarize_traces(name: &str, traces: &[&[f64]], level: f64) -> Result<ChainDiagnostics> {
    let mut pooled: Vec<f64> = traces.iter().flat_map(|t| t.iter().copied()).collect();
    if pooled.is_empty() {
        return Err(Error::EmptyDraws);
    }
    // centering on the first draw keeps the mean of a constant trace exact
    let x0 = pooled[0];
    let mean = x0 + pooled.iter().map(|x| x - x0).sum::<f64>() / pooled.len() as f64;
    pooled.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    let constant = pooled[0] == pooled[pooled.len() - 1];
    let (r_hat, ess) = if traces.len() >= 2 && traces[0].len() >= 4 {
        let r = split_rhat(traces)?;
        let e = ess_bulk(traces)?;
        (Some(r.value), Some(e.value))
    } else {
        (None, None)
    };
    Ok(ChainDiagnostics {
        parameter: name.to_string(),
        mean,
        ci_lo: quantile_sorted(&pooled, a),
        ci_hi: quantile_sorted(&pooled, 1.0 - a),
        r_hat,
        ess,
        degenerate: constant,
    })
}

/// Summaries of every recorded parameter, in draw-column order.
pub fn summarize(draws: &PosteriorDraws, level: f64) -> Result<Vec<ChainDiagnostics>> {
    if draws.n_draws() == 0 {
        return Err(Error::EmptyDraws);
    }
    let chains: Vec<&[Vec<f64>]> = draws.chains().iter().map(|c| c.values.as_slice()).collect();
    summarize_rows(draws.names(), &chains, level)
}

/// Summaries from per-chain draw rows (`chains[c][draw][parameter]`), as
/// read back from draw files.
pub fn summarize_rows(names: &[String], chains: &[&[Vec<f64>]], level: f64) -> Result<Vec<ChainDiagnostics>> {
    if chains.iter().all(|c| c.is_empty()) {
        return Err(Error::EmptyDraws);
    }
    if chains.iter().flat_map(|c| c.iter()).any(|row| row.len() != names.len()) {
        return Err(Error::Shape("draw rows do not match the parameter names".into()));
    }
    (0..names.len())
        .into_par_iter()
        .map(|p| {
            let traces: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| v[p]).collect()).collect();
            let refs: Vec<&[f64]> = traces.iter().map(|t| t.as_slice()).collect();
            summarize_traces(&names[p], &refs, level)
        })
        .collect()
}
