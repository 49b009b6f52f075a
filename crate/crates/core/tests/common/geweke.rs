//! Forward versus successive-conditional simulation on a small model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use dinatrace_core::measurement::ItemParameters;
use dinatrace_core::model::{
    validate_dataset, AttributeProfilePath, CovariateMatrix, Dataset, DatasetDimensions, FitConfig, ItemParams,
    LogitCoefficients, LossMode, Pattern, QMatrixSet, ResponsePanel, SparsityState, TransitionCoefficients,
};
use dinatrace_core::sampler::{ChainSampler, ParameterState};

use super::{batch_mean_se, guess_slip, p_correct, predictor, sigmoid};

const N: usize = 20;
const J: usize = 6;
const K: usize = 2;
const T: usize = 2;
const THETA_PRIOR: (f64, f64) = (2.0, 2.0);
const MIN_ITEMS: usize = 3;

fn config() -> FitConfig {
    FitConfig {
        n_chains: 1,
        theta_prior: THETA_PRIOR,
        identifiability_min_items_per_attribute: MIN_ITEMS,
        loss_mode: LossMode::SoftMonotone,
        ..FitConfig::default()
    }
}

fn coefficients(rng: &mut ChaCha8Rng, intercept_mean: f64) -> LogitCoefficients {
    let sd = config().regression_prior_sd;
    let mut draw = |m: f64| m + sd * rng.sample::<f64, _>(StandardNormal);
    let intercepts = (0..K).map(|_| draw(intercept_mean)).collect();
    let slopes = (0..K).map(|_| draw(0.0)).collect();
    LogitCoefficients::new(1, intercepts, slopes).unwrap()
}

/// Q and theta from their joint prior: entries Bernoulli(theta), accepted
/// only when every row is non-empty and every attribute has `MIN_ITEMS`
/// items at every time point.
fn prior_q(rng: &mut ChaCha8Rng) -> (f64, QMatrixSet) {
    let beta = Beta::new(THETA_PRIOR.0, THETA_PRIOR.1).unwrap();
    loop {
        let theta: f64 = beta.sample(rng);
        let rows: Vec<Pattern> = (0..J * T)
            .map(|_| (0..K).fold(0, |acc, k| acc | ((rng.random::<f64>() < theta) as u32) << k))
            .collect();
        let ok = rows.iter().all(|&r| r != 0)
            && (0..T).all(|t| (0..K).all(|k| rows[t * J..(t + 1) * J].iter().filter(|&&r| r >> k & 1 == 1).count() >= MIN_ITEMS));
        if ok {
            return (theta, QMatrixSet::from_rows(J, K, T, rows, false).unwrap());
        }
    }
}

fn prior_alpha(rng: &mut ChaCha8Rng, z: &CovariateMatrix, init: &LogitCoefficients, trans: &TransitionCoefficients) -> AttributeProfilePath {
    let mut alpha = AttributeProfilePath::new(N, K, T);
    for i in 0..N {
        let zi = z.row(i);
        let mut prev: Pattern = 0;
        for t in 0..T {
            let mut p = 0;
            for k in 0..K {
                let on = if t == 0 {
                    rng.random::<f64>() < sigmoid(predictor(init, k, zi))
                } else if prev >> k & 1 == 0 {
                    rng.random::<f64>() < sigmoid(predictor(&trans.gain, k, zi))
                } else {
                    rng.random::<f64>() >= sigmoid(predictor(trans.loss.as_ref().unwrap(), k, zi))
                };
                p |= (on as u32) << k;
            }
            alpha.set_pattern(i, t, p);
            prev = p;
        }
    }
    alpha
}

fn prior_state(rng: &mut ChaCha8Rng, z: &CovariateMatrix) -> ParameterState {
    let (theta, q) = prior_q(rng);
    let g: Vec<f64> = (0..J * T).map(|_| rng.random_range(1e-9..1.0)).collect();
    let s: Vec<f64> = (0..J * T).map(|_| rng.random_range(1e-9..1.0)).collect();
    let init = coefficients(rng, 0.0);
    let gain = coefficients(rng, 0.0);
    let loss = coefficients(rng, config().loss_intercept_prior_mean);
    let trans = TransitionCoefficients::new(gain, Some(loss), LossMode::SoftMonotone).unwrap();
    let alpha = prior_alpha(rng, z, &init, &trans);
    ParameterState {
        q,
        items: ItemParameters::GuessSlip(ItemParams::new(J, T, g, s, false).unwrap()),
        alpha,
        init,
        trans,
        sparsity: SparsityState::new(theta.clamp(1e-12, 1.0 - 1e-12), THETA_PRIOR.0, THETA_PRIOR.1).unwrap(),
    }
}

fn responses(rng: &mut ChaCha8Rng, state: &ParameterState, z: &CovariateMatrix) -> Dataset {
    let p = guess_slip(state);
    let mut panel = ResponsePanel::new(N, J, T);
    for i in 0..N {
        for t in 0..T {
            for j in 0..J {
                let pc = p_correct(state.alpha.pattern(i, t), state.q.row(j, t), p.guessing(j, t), p.slipping(j, t));
                panel.set(i, j, t, Some((rng.random::<f64>() < pc) as u8));
            }
        }
    }
    let dims = DatasetDimensions::new(N, J, K, T, 1).unwrap();
    validate_dataset(&panel, z, &dims).unwrap()
}

fn summary(state: &ParameterState) -> [f64; 3] {
    let p = guess_slip(state);
    let n = (J * T) as f64;
    let g = (0..T).flat_map(|t| (0..J).map(move |j| (j, t))).map(|(j, t)| p.guessing(j, t)).sum::<f64>() / n;
    let s = (0..T).flat_map(|t| (0..J).map(move |j| (j, t))).map(|(j, t)| p.slipping(j, t)).sum::<f64>() / n;
    [g, s, state.sparsity.theta]
}

/// Mean of g, s and theta under both schemes.
pub struct GewekeStat {
    pub name: &'static str,
    pub forward: f64,
    pub successive: f64,
    /// Combined batch-means standard error of the difference.
    pub se: f64,
}

pub fn geweke(seed: u64, draws: usize) -> Vec<GewekeStat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zv: Vec<f64> = (0..N).map(|_| rng.sample(StandardNormal)).collect();
    let z = CovariateMatrix::new(N, vec!["z1".into()], zv).unwrap();

    let forward: Vec<[f64; 3]> = (0..draws).map(|_| summary(&prior_state(&mut rng, &z))).collect();

    let mut sampler = ChainSampler::from_state(prior_state(&mut rng, &z), &config(), 0).unwrap();
    // adaptation would break the fixed-kernel property the check relies on
    sampler.freeze_adaptation();
    let mut chain = Vec::with_capacity(draws);
    for it in 0..draws {
        let data = responses(&mut rng, &sampler.state, &z);
        sampler.sweep(&data, it as u64).unwrap();
        chain.push(summary(&sampler.state));
    }

    ["g", "s", "theta"]
        .iter()
        .enumerate()
        .map(|(idx, &name)| {
            let f: Vec<f64> = forward.iter().map(|x| x[idx]).collect();
            let c: Vec<f64> = chain.iter().map(|x| x[idx]).collect();
            let (mf, sef) = batch_mean_se(&f, 40);
            let (mc, sec) = batch_mean_se(&c, 40);
            GewekeStat { name, forward: mf, successive: mc, se: (sef * sef + sec * sec).sqrt() }
        })
        .collect()
}
