use serde::{Deserialize, Serialize};

use crate::measurement::ItemParameters;
use crate::model::{
    AttributeProfilePath, Dataset, LogitCoefficients, LossMode, MeasurementModel, Pattern,
    QMatrixSet, SparsityState, TransitionCoefficients,
};

/// Every unknown of the model at one point of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub q: QMatrixSet,
    pub items: ItemParameters,
    pub alpha: AttributeProfilePath,
    pub init: LogitCoefficients,
    pub trans: TransitionCoefficients,
    pub sparsity: SparsityState,
}

/// Which parameter groups appear in the draw records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawLayout {
    pub n_items: usize,
    pub n_attributes: usize,
    pub n_times: usize,
    pub n_covariates: usize,
    pub model: MeasurementModel,
    pub q_sampled: bool,
    pub loss_mode: LossMode,
}

impl DrawLayout {
    /// Flattened parameter names with 1-based indices.
    pub fn names(&self) -> Vec<String> {
        let (j, k, t, c) = (self.n_items, self.n_attributes, self.n_times, self.n_covariates);
        let mut names = Vec::new();
        match self.model {
            MeasurementModel::Dina | MeasurementModel::Dino => {
                for tt in 0..t {
                    for jj in 0..j {
                        names.push(format!("g[{},{}]", jj + 1, tt + 1));
                    }
                }
                for tt in 0..t {
                    for jj in 0..j {
                        names.push(format!("s[{},{}]", jj + 1, tt + 1));
                    }
                }
            }
            MeasurementModel::Gdina => {
                for tt in 0..t {
                    for jj in 0..j {
                        for m in 0..(1usize << k) {
                            names.push(format!("lambda[{},{},{}]", jj + 1, tt + 1, m));
                        }
                    }
                }
            }
        }
        if self.q_sampled {
            for tt in 0..t {
                for jj in 0..j {
                    for kk in 0..k {
                        names.push(format!("Q[{},{},{}]", jj + 1, kk + 1, tt + 1));
                    }
                }
            }
            names.push("theta".into());
        }
        for kk in 0..k {
            names.push(format!("beta0[{}]", kk + 1));
        }
        for kk in 0..k {
            for cc in 0..c {
                names.push(format!("betaZ[{},{}]", kk + 1, cc + 1));
            }
        }
        for kk in 0..k {
            for cc in 0..=c {
                names.push(format!("gamma01[{},{}]", kk + 1, cc));
            }
        }
        if self.loss_mode != LossMode::Absorbing {
            for kk in 0..k {
                for cc in 0..=c {
                    names.push(format!("gamma10[{},{}]", kk + 1, cc));
                }
            }
        }
        names
    }

    /// Values in the order of [`DrawLayout::names`].
    pub fn flatten(&self, state: &ParameterState) -> Vec<f64> {
        let (j, k, t, c) = (self.n_items, self.n_attributes, self.n_times, self.n_covariates);
        let mut v = Vec::new();
        match &state.items {
            ItemParameters::GuessSlip(p) => {
                for tt in 0..t {
                    for jj in 0..j {
                        v.push(p.guessing(jj, tt));
                    }
                }
                for tt in 0..t {
                    for jj in 0..j {
                        v.push(p.slipping(jj, tt));
                    }
                }
            }
            ItemParameters::Gdina(coeffs) => {
                for coef in coeffs {
                    v.extend(expand_lambda(coef.required(), coef.lambda(), k));
                }
            }
        }
        if self.q_sampled {
            for tt in 0..t {
                for jj in 0..j {
                    let row = state.q.row(jj, tt);
                    for kk in 0..k {
                        v.push(((row >> kk) & 1) as f64);
                    }
                }
            }
            v.push(state.sparsity.theta);
        }
        v.extend_from_slice(&state.init.intercepts);
        v.extend_from_slice(&state.init.slopes);
        for kk in 0..k {
            v.extend(state.trans.gain.block(kk));
        }
        if let Some(loss) = &state.trans.loss {
            for kk in 0..k {
                v.extend(loss.block(kk));
            }
        }
        debug_assert_eq!(v.len(), self.names().len());
        let _ = c;
        v
    }
}

/// Places reduced-subset coefficients at full attribute-subset positions;
/// subsets that involve unrequired attributes are 0.
pub fn expand_lambda(required: Pattern, lambda: &[f64], n_attributes: usize) -> Vec<f64> {
    let mut out = vec![0.0; 1 << n_attributes];
    for (m, &l) in lambda.iter().enumerate() {
        out[expand_subset(m as Pattern, required) as usize] = l;
    }
    out
}

/// Inverse of reducing a pattern onto `mask`: spreads the low bits of `m`
/// over the set bits of `mask`.
pub fn expand_subset(m: Pattern, mask: Pattern) -> Pattern {
    let mut out = 0;
    let mut b = 0;
    let mut rest = mask;
    while rest != 0 {
        let k = rest.trailing_zeros();
        if m & (1 << b) != 0 {
            out |= 1 << k;
        }
        b += 1;
        rest &= rest - 1;
    }
    out
}

/// Observed response counts per (item, time, pattern, y) under the current
/// profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTally {
    n_items: usize,
    n_patterns: usize,
    counts: Vec<[u32; 2]>,
}

impl ResponseTally {
    pub fn new(dataset: &Dataset, alpha: &AttributeProfilePath) -> Self {
        let d = dataset.dims();
        let n_patterns = d.n_patterns();
        let mut counts = vec![[0u32; 2]; d.n_items * d.n_times * n_patterns];
        for i in 0..d.n_persons {
            for t in 0..d.n_times {
                let p = alpha.pattern(i, t) as usize;
                for (j, &y) in dataset.slice(i, t).iter().enumerate() {
                    if y <= 1 {
                        counts[(t * d.n_items + j) * n_patterns + p][y as usize] += 1;
                    }
                }
            }
        }
        ResponseTally {
            n_items: d.n_items,
            n_patterns,
            counts,
        }
    }

    /// `[n(y=0), n(y=1)]` for every pattern of item (j, t).
    pub fn item(&self, item: usize, time: usize) -> &[[u32; 2]] {
        let o = (time * self.n_items + item) * self.n_patterns;
        &self.counts[o..o + self.n_patterns]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reduce_pattern;

    #[test]
    fn expand_inverts_reduce() {
        for mask in 0u32..16 {
            for alpha in 0u32..16 {
                let sub = alpha & mask;
                assert_eq!(expand_subset(reduce_pattern(alpha, mask), mask), sub);
            }
        }
    }
}
