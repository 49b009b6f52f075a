//! Recovery metrics and bootstrap standard errors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttributeProfilePath, QMatrixSet};
use crate::sampler::MasteryEstimates;

/// Attribute-wise agreement rate, indexed `time * K + k`.
pub fn aar(estimated: &AttributeProfilePath, truth: &AttributeProfilePath) -> Result<Vec<f64>> {
    let (n, k, t) = (truth.n_persons(), truth.n_attributes(), truth.n_times());
    if (estimated.n_persons(), estimated.n_attributes(), estimated.n_times()) != (n, k, t) {
        return Err(Error::Shape("estimated and true profiles differ in shape".into()));
    }
    let mut out = vec![0.0; k * t];
    for tt in 0..t {
        for kk in 0..k {
            let hits = (0..n).filter(|&i| estimated.get(i, kk, tt) == truth.get(i, kk, tt)).count();
            out[tt * k + kk] = hits as f64 / n as f64;
        }
    }
    Ok(out)
}

/// Thresholded posterior profiles as a path.
pub fn profiles_to_path(m: &MasteryEstimates) -> AttributeProfilePath {
    let mut path = AttributeProfilePath::new(m.n_persons, m.n_attributes, m.n_times);
    for i in 0..m.n_persons {
        for t in 0..m.n_times {
            let p = (0..m.n_attributes).fold(0, |acc, k| acc | ((m.profile(i, k, t) as u32) << k));
            path.set_pattern(i, t, p);
        }
    }
    path
}

/// Q-matrix recovery at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QRecovery {
    pub accuracy: f64,
    /// Share of true ones estimated as zero; 0 when there are no true ones.
    pub fnr: f64,
    /// Share of true zeros estimated as one; 0 when there are no true zeros.
    pub fpr: f64,
    /// Mean posterior inclusion over true-one entries.
    pub pm1: Option<f64>,
    /// Mean posterior inclusion over true-zero entries.
    pub pm0: Option<f64>,
}

/// Per-time recovery of `truth` by the MAP matrix `estimated`.
/// `entry_means` is indexed `(time * J + item) * K + k`.
pub fn q_recovery(estimated: &QMatrixSet, truth: &QMatrixSet, entry_means: Option<&[f64]>) -> Result<Vec<QRecovery>> {
    let (j, k, t) = (truth.n_items(), truth.n_attributes(), truth.n_times());
    if (estimated.n_items(), estimated.n_attributes(), estimated.n_times()) != (j, k, t) {
        return Err(Error::Shape("estimated and true Q-matrices differ in shape".into()));
    }
    if entry_means.is_some_and(|m| m.len() != j * k * t) {
        return Err(Error::Shape("posterior means do not match the Q-matrix".into()));
    }
    let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok((0..t)
        .map(|tt| {
            let (mut ones, mut zeros, mut miss1, mut miss0) = (0, 0, 0, 0);
            let (mut pm1, mut pm0) = (0.0, 0.0);
            for jj in 0..j {
                for kk in 0..k {
                    let (e, tr) = (estimated.get(jj, kk, tt), truth.get(jj, kk, tt));
                    let m = entry_means.map(|m| m[(tt * j + jj) * k + kk]).unwrap_or(f64::NAN);
                    if tr == 1 {
                        ones += 1;
                        miss1 += (e == 0) as usize;
                        pm1 += m;
                    } else {
                        zeros += 1;
                        miss0 += (e == 1) as usize;
                        pm0 += m;
                    }
                }
            }
            let mean = |sum: f64, n: usize| (entry_means.is_some() && n > 0).then(|| sum / n as f64);
            QRecovery {
                accuracy: 1.0 - (miss1 + miss0) as f64 / (j * k) as f64,
                fnr: rate(miss1, ones),
                fpr: rate(miss0, zeros),
                pm1: mean(pm1, ones),
                pm0: mean(pm0, zeros),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mae: f64,
    pub rmse: f64,
}

/// MAE and RMSE over `(estimate, truth)` pairs.
pub fn parameter_errors(pairs: &[(f64, f64)]) -> Result<ErrorSummary> {
    if pairs.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(|(e, t)| (e - t).abs()).sum::<f64>() / n;
    let mse = pairs.iter().map(|(e, t)| (e - t).powi(2)).sum::<f64>() / n;
    Ok(ErrorSummary { mae, rmse: mse.sqrt() })
}

/// Standard deviation of `b` resampled means.
pub fn bootstrap_se<R: Rng + ?Sized>(values: &[f64], b: usize, rng: &mut R) -> Result<f64> {
    bootstrap_se_with(values, b, rng, |s| s.iter().sum::<f64>() / s.len() as f64)
}

/// Standard deviation of `statistic` over `b` resamples with replacement.
pub fn bootstrap_se_with<R: Rng + ?Sized>(
    values: &[f64],
    b: usize,
    rng: &mut R,
    statistic: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    let r = values.len();
    if r < 2 {
        return Err(Error::TooFewReplications(r));
    }
    if b < 2 {
        return Err(Error::Config("bootstrap needs at least two resamples".into()));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(0.0);
    }
    let mut sample = vec![0.0; r];
    let stats: Vec<f64> = (0..b)
        .map(|_| {
            for s in sample.iter_mut() {
                *s = values[rng.random_range(0..r)];
            }
            statistic(&sample)
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / b as f64;
    Ok((stats.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1) as f64).sqrt())
}
