//! Fixtures shared by the integration tests. Data are generated here with
//! plain arithmetic rather than through the library's own generators.
#![allow(dead_code)]

pub mod geweke;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use dinatrace_core::measurement::ItemParameters;
use dinatrace_core::model::{
    validate_dataset, AttributeProfilePath, CovariateMatrix, Dataset, DatasetDimensions, ItemParams,
    LogitCoefficients, LossMode, Pattern, QMatrixSet, ResponsePanel, SparsityState, TransitionCoefficients,
};
use dinatrace_core::sampler::ParameterState;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn eta(alpha: Pattern, q_row: Pattern) -> bool {
    alpha & q_row == q_row
}

/// DINA success probability from scratch.
pub fn p_correct(alpha: Pattern, q_row: Pattern, g: f64, s: f64) -> f64 {
    if eta(alpha, q_row) {
        1.0 - s
    } else {
        g
    }
}

pub struct Toy {
    pub dims: DatasetDimensions,
    pub panel: ResponsePanel,
    pub covariates: CovariateMatrix,
    pub dataset: Dataset,
    pub state: ParameterState,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the fixture independent of distribution crates
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn coefficients(rng: &mut ChaCha8Rng, k: usize, c: usize, mean: f64) -> LogitCoefficients {
    let intercepts = (0..k).map(|_| mean + 0.7 * normal(rng)).collect();
    let slopes = (0..k * c).map(|_| 0.5 * normal(rng)).collect();
    LogitCoefficients::new(c, intercepts, slopes).unwrap()
}

/// Linear predictor with intercept first.
pub fn predictor(coef: &LogitCoefficients, k: usize, z: &[f64]) -> f64 {
    let c = z.len();
    coef.intercepts[k] + (0..c).map(|j| coef.slopes[k * c + j] * z[j]).sum::<f64>()
}

/// Random DINA model with data drawn from it. `missing` is the share of
/// responses dropped at random, never emptying a (person, time) slice.
#[allow(clippy::too_many_arguments)]
pub fn toy(
    seed: u64,
    n: usize,
    j: usize,
    k: usize,
    t: usize,
    c: usize,
    loss_mode: LossMode,
    missing: f64,
) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Pattern> = (0..j * t).map(|_| rng.random_range(1..(1u32 << k))).collect();
    let q = QMatrixSet::from_rows(j, k, t, rows, false).unwrap();
    let g: Vec<f64> = (0..j * t).map(|_| rng.random_range(0.05..0.35)).collect();
    let s: Vec<f64> = (0..j * t).map(|_| rng.random_range(0.05..0.35)).collect();
    let init = coefficients(&mut rng, k, c, 0.0);
    let gain = coefficients(&mut rng, k, c, 0.0);
    let loss = (loss_mode != LossMode::Absorbing).then(|| coefficients(&mut rng, k, c, -1.5));
    let zv: Vec<f64> = (0..n * c).map(|_| normal(&mut rng)).collect();
    let names = (1..=c).map(|i| format!("z{i}")).collect();
    let covariates = CovariateMatrix::new(n, names, zv.clone()).unwrap();
    let mut alpha = AttributeProfilePath::new(n, k, t);
    for i in 0..n {
        let z = &zv[i * c..(i + 1) * c];
        let mut prev: Pattern = 0;
        for tt in 0..t {
            let mut p: Pattern = 0;
            for kk in 0..k {
                let on = if tt == 0 {
                    rng.random::<f64>() < sigmoid(predictor(&init, kk, z))
                } else if prev >> kk & 1 == 0 {
                    rng.random::<f64>() < sigmoid(predictor(&gain, kk, z))
                } else {
                    match &loss {
                        Some(l) => rng.random::<f64>() >= sigmoid(predictor(l, kk, z)),
                        None => true,
                    }
                };
                p |= (on as u32) << kk;
            }
            alpha.set_pattern(i, tt, p);
            prev = p;
        }
    }
    let mut panel = ResponsePanel::new(n, j, t);
    for i in 0..n {
        for tt in 0..t {
            let keep_one = rng.random_range(0..j);
            for jj in 0..j {
                let idx = tt * j + jj;
                let y = rng.random::<f64>() < p_correct(alpha.pattern(i, tt), q.row(jj, tt), g[idx], s[idx]);
                let dropped = jj != keep_one && rng.random::<f64>() < missing;
                panel.set(i, jj, tt, (!dropped).then_some(y as u8));
            }
        }
    }
    let dims = DatasetDimensions::new(n, j, k, t, c).unwrap();
    let dataset = validate_dataset(&panel, &covariates, &dims).unwrap();
    let trans = TransitionCoefficients::new(gain, loss, loss_mode).unwrap();
    let state = ParameterState {
        q,
        items: ItemParameters::GuessSlip(ItemParams::new(j, t, g, s, false).unwrap()),
        alpha,
        init,
        trans,
        sparsity: SparsityState::new(0.4, 1.0, 1.0).unwrap(),
    };
    Toy {
        dims,
        panel,
        covariates,
        dataset,
        state,
    }
}

pub fn guess_slip(state: &ParameterState) -> &ItemParams {
    match &state.items {
        ItemParameters::GuessSlip(p) => p,
        ItemParameters::Gdina(_) => panic!("fixture uses guessing and slipping"),
    }
}

/// Log prior of one person's path, written out attribute by attribute.
pub fn path_log_prior(state: &ParameterState, z: &[f64], path: &[Pattern]) -> f64 {
    let k = state.alpha.n_attributes();
    let mut lp = 0.0;
    for kk in 0..k {
        let p1 = sigmoid(predictor(&state.init, kk, z));
        lp += if path[0] >> kk & 1 == 1 { p1.ln() } else { (1.0 - p1).ln() };
        for w in path.windows(2) {
            let (a, b) = (w[0] >> kk & 1, w[1] >> kk & 1);
            let stay_or_move = if a == 0 {
                let gain = sigmoid(predictor(&state.trans.gain, kk, z));
                if b == 1 { gain } else { 1.0 - gain }
            } else {
                match &state.trans.loss {
                    Some(l) => {
                        let loss = sigmoid(predictor(l, kk, z));
                        if b == 0 { loss } else { 1.0 - loss }
                    }
                    None => (b == 1) as u8 as f64,
                }
            };
            lp += stay_or_move.ln();
        }
    }
    lp
}

/// Log-likelihood of one person's observed responses along `path`.
pub fn path_log_lik(toy: &Toy, state: &ParameterState, person: usize, path: &[Pattern]) -> f64 {
    let p = guess_slip(state);
    let mut ll = 0.0;
    for (tt, &a) in path.iter().enumerate() {
        for jj in 0..toy.dims.n_items {
            if let Some(y) = toy.panel.get(person, jj, tt) {
                let pc = p_correct(a, state.q.row(jj, tt), p.guessing(jj, tt), p.slipping(jj, tt));
                ll += if y == 1 { pc.ln() } else { (1.0 - pc).ln() };
            }
        }
    }
    ll
}

/// Exact conditional of the pattern at `time` given the rest of `path`.
pub fn oracle_step(toy: &Toy, person: usize, time: usize, path: &[Pattern]) -> Vec<f64> {
    let k = toy.dims.n_attributes;
    let z = toy.covariates.row(person);
    let logw: Vec<f64> = (0..1u32 << k)
        .map(|a| {
            let mut p = path.to_vec();
            p[time] = a;
            path_log_prior(&toy.state, z, &p) + path_log_lik(toy, &toy.state, person, &p)
        })
        .collect();
    normalize(&logw)
}

/// Counts of (eta, y) for item (j, t), straight from the panel.
pub fn raw_eta_counts(toy: &Toy, q_row: Pattern, item: usize, time: usize) -> [[u64; 2]; 2] {
    let mut n = [[0u64; 2]; 2];
    for i in 0..toy.dims.n_persons {
        if let Some(y) = toy.panel.get(i, item, time) {
            n[eta(toy.state.alpha.pattern(i, time), q_row) as usize][y as usize] += 1;
        }
    }
    n
}

/// Normalizes log weights with plain arithmetic.
pub fn normalize(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Total variation distance between an empirical count vector and `p`.
pub fn total_variation(counts: &[u64], p: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    0.5 * counts.iter().zip(p).map(|(&c, &q)| (c as f64 / n as f64 - q).abs()).sum::<f64>()
}

/// Mean and batch-means standard error of an autocorrelated series.
pub fn batch_mean_se(x: &[f64], batches: usize) -> (f64, f64) {
    let n = x.len() / batches * batches;
    let size = n / batches;
    let mean = x[..n].iter().sum::<f64>() / n as f64;
    let bm: Vec<f64> = x[..n].chunks(size).map(|b| b.iter().sum::<f64>() / size as f64).collect();
    let var = bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}
