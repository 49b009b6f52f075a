//! Block Gibbs update of attribute paths, one time point at a time.

use rand::Rng;
use rayon::prelude::*;

use crate::dynamics::{bernoulli_logit_loglik, transition_log_prob};
use crate::measurement::{pattern_logliks, PatternLikelihoodCache};
use crate::model::{bit, Dataset, LogitCoefficients, Pattern, TransitionCoefficients};

use super::rng::{Block, ChainKey};

/// Per-person log-probability tables of the chain prior, factorized by
/// attribute: `init[k][b]` and `trans[k][a][b]`.
pub(crate) struct PriorTables {
    init: Vec<[f64; 2]>,
    trans: Vec<[[f64; 2]; 2]>,
}

impl PriorTables {
    pub(crate) fn new(
        n_attributes: usize,
        init: &LogitCoefficients,
        trans: &TransitionCoefficients,
        z: &[f64],
    ) -> Self {
        let mut ti = Vec::with_capacity(n_attributes);
        let mut tt = Vec::with_capacity(n_attributes);
        for k in 0..n_attributes {
            let x = init.linear_predictor(k, z);
            ti.push([bernoulli_logit_loglik(0, x), bernoulli_logit_loglik(1, x)]);
            let mut m = [[0.0; 2]; 2];
            for a in 0..2u8 {
                for b in 0..2u8 {
                    m[a as usize][b as usize] = transition_log_prob(trans, z, k, a, b);
                }
            }
            tt.push(m);
        }
        PriorTables { init: ti, trans: tt }
    }

    #[inline]
    fn initial(&self, p: Pattern) -> f64 {
        self.init
            .iter()
            .enumerate()
            .map(|(k, t)| t[bit(p, k) as usize])
            .sum()
    }

    #[inline]
    fn transition(&self, from: Pattern, to: Pattern) -> f64 {
        self.trans
            .iter()
            .enumerate()
            .map(|(k, t)| t[bit(from, k) as usize][bit(to, k) as usize])
            .sum()
    }
}

/// Unnormalized log full conditional of the pattern at `time` for every
/// pattern, given the rest of the person's path.
fn step_log_weights(
    dataset: &Dataset,
    cache: &PatternLikelihoodCache,
    tables: &PriorTables,
    person: usize,
    time: usize,
    path: &[Pattern],
    out: &mut [f64],
) {
    pattern_logliks(dataset, cache, person, time, out);
    let last = path.len() - 1;
    for (p, w) in out.iter_mut().enumerate() {
        let p = p as Pattern;
        *w += if time == 0 {
            tables.initial(p)
        } else {
            tables.transition(path[time - 1], p)
        };
        if time < last {
            *w += tables.transition(p, path[time + 1]);
        }
    }
}

/// Normalized full conditional of a person's pattern at `time`, exposed for
/// checking the sampler against brute-force enumeration.
#[allow(clippy::too_many_arguments)]
pub fn alpha_step_conditional(
    dataset: &Dataset,
    cache: &PatternLikelihoodCache,
    init: &LogitCoefficients,
    trans: &TransitionCoefficients,
    person: usize,
    time: usize,
    path: &[Pattern],
) -> Vec<f64> {
    let k = dataset.dims().n_attributes;
    let tables = PriorTables::new(k, init, trans, dataset.covariates().row(person));
    let mut w = vec![0.0; 1 << k];
    step_log_weights(dataset, cache, &tables, person, time, path, &mut w);
    normalize_log_weights(&mut w);
    w
}

/// Turns log weights into probabilities in place.
pub(crate) fn normalize_log_weights(w: &mut [f64]) {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in w.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in w.iter_mut() {
        *x /= total;
    }
}

/// Draws an index from probabilities summing to one.
pub(crate) fn draw_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Updates one person's path, time points in increasing order.
pub fn sample_alpha_path<R: Rng + ?Sized>(
    rng: &mut R,
    dataset: &Dataset,
    cache: &PatternLikelihoodCache,
    init: &LogitCoefficients,
    trans: &TransitionCoefficients,
    person: usize,
    path: &mut [Pattern],
) {
    let k = dataset.dims().n_attributes;
    let tables = PriorTables::new(k, init, trans, dataset.covariates().row(person));
    let mut w = vec![0.0; 1 << k];
    for t in 0..path.len() {
        step_log_weights(dataset, cache, &tables, person, t, path, &mut w);
        normalize_log_weights(&mut w);
        path[t] = draw_categorical(rng, &w) as Pattern;
    }
}

/// Updates every person in parallel, each with its own stream.
pub(crate) fn update_all_paths(
    key: &ChainKey,
    iteration: u64,
    dataset: &Dataset,
    cache: &PatternLikelihoodCache,
    init: &LogitCoefficients,
    trans: &TransitionCoefficients,
    patterns: &mut [Pattern],
) {
    let t = dataset.dims().n_times;
    patterns
        .par_chunks_mut(t)
        .enumerate()
        .for_each(|(i, path)| {
            let mut rng = key.stream(iteration, Block::Alpha, i);
            sample_alpha_path(&mut rng, dataset, cache, init, trans, i, path);
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::path_log_prior;
    use crate::measurement::{build_pattern_cache, ItemParameters};
    use crate::model::{
        validate_dataset, CovariateMatrix, DatasetDimensions, ItemParams, LossMode, MeasurementModel,
        QMatrixSet, ResponsePanel,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(flat: bool, mode: LossMode) -> (Dataset, PatternLikelihoodCache, LogitCoefficients, TransitionCoefficients) {
        let (n, j, k, t) = (3, 4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut panel = ResponsePanel::new(n, j, t);
        for i in 0..n {
            for jj in 0..j {
                for tt in 0..t {
                    panel.set(i, jj, tt, Some(rng.random_range(0..2)));
                }
            }
        }
        panel.set(1, 2, 1, None);
        let cov = CovariateMatrix::new(n, vec!["z".into()], vec![-0.5, 0.3, 1.2]).unwrap();
        let dims = DatasetDimensions::new(n, j, k, t, 1).unwrap();
        let ds = validate_dataset(&panel, &cov, &dims).unwrap();
        let q = QMatrixSet::from_rows(j, k, t, [1, 2, 3, 1].repeat(t), false).unwrap();
        let (g, s) = if flat { (0.5, 0.5) } else { (0.15, 0.2) };
        let items = ItemParams::new(j, t, vec![g; j * t], vec![s; j * t], false).unwrap();
        let cache = build_pattern_cache(&q, &ItemParameters::GuessSlip(items), MeasurementModel::Dina).unwrap();
        let init = LogitCoefficients::new(1, vec![-0.3, 0.4], vec![0.5, -0.2]).unwrap();
        let gain = LogitCoefficients::new(1, vec![0.2, -0.6], vec![0.3, 0.1]).unwrap();
        let loss = (mode != LossMode::Absorbing)
            .then(|| LogitCoefficients::new(1, vec![-1.0, -1.5], vec![0.2, 0.4]).unwrap());
        let trans = TransitionCoefficients::new(gain, loss, mode).unwrap();
        (ds, cache, init, trans)
    }

    #[test]
    fn flat_likelihood_gives_chain_prior() {
        let (ds, cache, init, trans) = toy(true, LossMode::Free);
        let z = ds.covariates().row(0).to_vec();
        let path = vec![1, 3, 2];
        for t in 0..3 {
            let cond = alpha_step_conditional(&ds, &cache, &init, &trans, 0, t, &path);
            let mut oracle: Vec<f64> = (0..4u32)
                .map(|p| {
                    let mut q = path.clone();
                    q[t] = p;
                    path_log_prior(&q, 2, &init, &trans, &z).exp()
                })
                .collect();
            let s: f64 = oracle.iter().sum();
            oracle.iter_mut().for_each(|x| *x /= s);
            for (a, b) in cond.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn absorbing_mode_never_loses_mastery() {
        let (ds, cache, init, trans) = toy(false, LossMode::Absorbing);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..3 {
            let mut path = vec![0, 1, 3];
            for _ in 0..2000 {
                sample_alpha_path(&mut rng, &ds, &cache, &init, &trans, i, &mut path);
                assert!(path.windows(2).all(|w| w[0] & !w[1] == 0), "{path:?}");
            }
        }
    }

    #[test]
    fn categorical_skips_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let i = draw_categorical(&mut rng, &[0.0, 0.5, 0.0, 0.5]);
            assert!(i == 1 || i == 3);
        }
    }
}
