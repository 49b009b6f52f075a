//! Adaptive random-walk Metropolis for the logistic regression blocks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{bernoulli_logit_loglik, LogitModelSpec};
use crate::model::{bit, AttributeProfilePath, CovariateMatrix, LogitCoefficients};

const TARGET_ACCEPTANCE: f64 = 0.234;
const INITIAL_VARIANCE: f64 = 0.1;
const JITTER: f64 = 1e-8;

/// Which regression a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    Initial,
    Gain,
    Loss,
}

/// Outcomes of one attribute's regression: `(person, y)` pairs.
pub fn regression_outcomes(
    alpha: &AttributeProfilePath,
    kind: RegressionKind,
    attribute: usize,
) -> Vec<(usize, u8)> {
    let mut out = Vec::new();
    for i in 0..alpha.n_persons() {
        let path = alpha.person(i);
        match kind {
            RegressionKind::Initial => out.push((i, bit(path[0], attribute))),
            RegressionKind::Gain | RegressionKind::Loss => {
                for w in path.windows(2) {
                    let (a, b) = (bit(w[0], attribute), bit(w[1], attribute));
                    match (kind, a) {
                        (RegressionKind::Gain, 0) => out.push((i, b)),
                        (RegressionKind::Loss, 1) => out.push((i, 1 - b)),
                        _ => {}
                    }
                }
            }
        }
    }
    out
}

/// Log posterior of one block (intercept first) up to a constant.
pub fn block_log_target(
    block: &[f64],
    outcomes: &[(usize, u8)],
    z: &CovariateMatrix,
    spec: &LogitModelSpec,
) -> f64 {
    let mut lp = spec.block_log_prior(block);
    for &(i, y) in outcomes {
        let mut x = block[0];
        for (b, zc) in block[1..].iter().zip(z.row(i)) {
            x += b * zc;
        }
        lp += bernoulli_logit_loglik(y, x);
    }
    lp
}

/// Random-walk proposal whose covariance tracks the chain's empirical
/// covariance and whose scale follows a Robbins-Monro recursion towards
/// 0.234 acceptance. Adaptation stops once frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveProposal {
    dim: usize,
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    log_scale: f64,
    frozen: bool,
    chol: Vec<f64>,
    pub accepted: u64,
    pub proposed: u64,
}

impl AdaptiveProposal {
    pub fn new(dim: usize) -> Self {
        let mut p = AdaptiveProposal {
            dim,
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim * dim],
            log_scale: (2.38 / (dim as f64).sqrt()).ln(),
            frozen: false,
            chol: vec![0.0; dim * dim],
            accepted: 0,
            proposed: 0,
        };
        p.refresh_cholesky();
        p
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
        self.accepted = 0;
        self.proposed = 0;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Empirical covariance shrunk towards `INITIAL_VARIANCE * I` with
    /// `dim + 1` pseudo-observations.
    fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let n0 = (d + 1) as f64;
        let denom = self.n as f64 + n0;
        let mut c = vec![0.0; d * d];
        for r in 0..d {
            for s in 0..d {
                let prior = if r == s { n0 * INITIAL_VARIANCE } else { 0.0 };
                c[r * d + s] = (self.m2[r * d + s] + prior) / denom;
            }
            c[r * d + r] += JITTER;
        }
        c
    }

    fn refresh_cholesky(&mut self) {
        let d = self.dim;
        let a = self.covariance();
        let l = &mut self.chol;
        l.iter_mut().for_each(|x| *x = 0.0);
        for r in 0..d {
            for s in 0..=r {
                let mut sum = a[r * d + s];
                for k in 0..s {
                    sum -= l[r * d + k] * l[s * d + k];
                }
                if r == s {
                    l[r * d + r] = sum.max(JITTER).sqrt();
                } else {
                    l[r * d + s] = sum / l[s * d + s];
                }
            }
        }
    }

    fn observe(&mut self, x: &[f64], accept_prob: f64) {
        self.n += 1;
        let n = self.n as f64;
        let d = self.dim;
        let old: Vec<f64> = self.mean.clone();
        for r in 0..d {
            self.mean[r] += (x[r] - old[r]) / n;
        }
        for r in 0..d {
            for s in 0..d {
                self.m2[r * d + s] += (x[r] - old[r]) * (x[s] - self.mean[s]);
            }
        }
        self.log_scale += (accept_prob - TARGET_ACCEPTANCE) / n.powf(0.6);
        self.refresh_cholesky();
    }

    /// One Metropolis step; returns whether the proposal was accepted.
    pub fn step<R: Rng + ?Sized, F: Fn(&[f64]) -> f64>(
        &mut self,
        rng: &mut R,
        current: &mut [f64],
        current_lp: &mut f64,
        log_target: F,
    ) -> bool {
        let d = self.dim;
        let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let scale = self.scale();
        let proposal: Vec<f64> = (0..d)
            .map(|r| {
                let mut v = 0.0;
                for s in 0..=r {
                    v += self.chol[r * d + s] * eps[s];
                }
                current[r] + scale * v
            })
            .collect();
        let lp = log_target(&proposal);
        let log_ratio = lp - *current_lp;
        let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.exp().min(1.0) };
        let u: f64 = rng.random();
        let accepted = u < accept_prob;
        if accepted {
            current.copy_from_slice(&proposal);
            *current_lp = lp;
            self.accepted += 1;
        }
        self.proposed += 1;
        if !self.frozen {
            self.observe(current, accept_prob);
        }
        accepted
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Updates all attribute blocks of one regression.
#[allow(clippy::too_many_arguments)]
pub(crate) fn update_regression<R: Rng + ?Sized>(
    rng: &mut R,
    coeffs: &mut LogitCoefficients,
    proposals: &mut [AdaptiveProposal],
    alpha: &AttributeProfilePath,
    kind: RegressionKind,
    z: &CovariateMatrix,
    spec: &LogitModelSpec,
    steps: usize,
) {
    for k in 0..coeffs.n_attributes() {
        let outcomes = regression_outcomes(alpha, kind, k);
        let mut block = coeffs.block(k);
        let mut lp = block_log_target(&block, &outcomes, z, spec);
        for _ in 0..steps {
            proposals[k].step(rng, &mut block, &mut lp, |b| {
                block_log_target(b, &outcomes, z, spec)
            });
        }
        coeffs.set_block(k, &block);
    }
}
