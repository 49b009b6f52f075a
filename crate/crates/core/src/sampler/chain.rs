//! Chain orchestration: initialization, sweeps, thinning and accumulation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::LogitModelSpec;
use crate::error::{Error, Result};
use crate::measurement::{build_pattern_cache, ItemParameters};
use crate::model::{
    AttributeProfilePath, Dataset, DatasetDimensions, FitConfig, GdinaItemCoefficients, ItemParams,
    LogitCoefficients, LossMode, MeasurementModel, Pattern, QMatrixSet, QMode, SparsityState,
    TransitionCoefficients,
};
use crate::structure::{check_identifiability, initialize_q};

use super::alpha::update_all_paths;
use super::items::update_items;
use super::qrow::update_q_rows;
use super::regression::{update_regression, AdaptiveProposal, RegressionKind};
use super::rng::{Block, ChainKey};
use super::state::{DrawLayout, ParameterState, ResponseTally};
use super::theta::update_theta;

const KINDS: [RegressionKind; 3] = [RegressionKind::Initial, RegressionKind::Gain, RegressionKind::Loss];

/// Acceptance rate of one regression block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRecord {
    pub kind: RegressionKind,
    pub attribute: usize,
    pub warmup_rate: f64,
    pub sampling_rate: f64,
}

/// Runs sweeps of the full sampler for one chain.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    pub state: ParameterState,
    config: FitConfig,
    key: ChainKey,
    specs: [LogitModelSpec; 3],
    proposals: [Vec<AdaptiveProposal>; 3],
    warmup_rates: [Vec<f64>; 3],
    q_sampled: bool,
}

fn regression_specs(config: &FitConfig, k: usize, c: usize) -> Result<[LogitModelSpec; 3]> {
    let sd = config.regression_prior_sd;
    let loss_mean = if config.loss_mode == LossMode::SoftMonotone {
        config.loss_intercept_prior_mean
    } else {
        0.0
    };
    Ok([
        LogitModelSpec::new(LogitCoefficients::constant(k, c, 0.0), 0.0, sd)?,
        LogitModelSpec::new(LogitCoefficients::constant(k, c, 0.0), 0.0, sd)?,
        LogitModelSpec::new(LogitCoefficients::constant(k, c, loss_mean), loss_mean, sd)?,
    ])
}

/// Starting state of a chain, drawn from the chain's `Init` stream.
pub fn initial_state(
    dataset: &Dataset,
    config: &FitConfig,
    q_template: Option<&QMatrixSet>,
    chain: usize,
) -> Result<ParameterState> {
    let d = *dataset.dims();
    let key = ChainKey::new(config.seed, chain);
    let mut rng = key.stream(0, Block::Init, 0);
    let (a, b) = config.theta_prior;
    let sparsity = SparsityState::new(a / (a + b), a, b)?;
    let q = initialize_q(
        &d,
        &mut rng,
        config.q_mode,
        sparsity.theta,
        q_template,
        config.identifiability_min_items_per_attribute,
    )?;
    let n = d.n_items * d.n_times;
    let upper = config.item_init_upper;
    let g: Vec<f64> = (0..n).map(|_| upper * (1.0 - rng.random::<f64>())).collect();
    let s: Vec<f64> = (0..n).map(|_| upper * (1.0 - rng.random::<f64>())).collect();
    let items = match config.measurement_model {
        MeasurementModel::Dina | MeasurementModel::Dino => {
            ItemParameters::GuessSlip(ItemParams::new(d.n_items, d.n_times, g, s, config.monotone_items)?)
        }
        MeasurementModel::Gdina => ItemParameters::Gdina(
            (0..n)
                .map(|idx| GdinaItemCoefficients::dina_constrained(q.rows()[idx], g[idx], s[idx]))
                .collect::<Result<_>>()?,
        ),
    };
    let mut alpha = AttributeProfilePath::new(d.n_persons, d.n_attributes, d.n_times);
    for i in 0..d.n_persons {
        for k in 0..d.n_attributes {
            let mut bits: Vec<bool> = (0..d.n_times).map(|_| rng.random_bool(0.5)).collect();
            if config.loss_mode == LossMode::Absorbing {
                bits.sort();
            }
            for (t, &on) in bits.iter().enumerate() {
                if on {
                    let p = alpha.pattern(i, t) | (1 << k);
                    alpha.set_pattern(i, t, p);
                }
            }
        }
    }
    let specs = regression_specs(config, d.n_attributes, d.n_covariates)?;
    let loss = (config.loss_mode != LossMode::Absorbing).then(|| specs[2].coefficients.clone());
    Ok(ParameterState {
        q,
        items,
        alpha,
        init: specs[0].coefficients.clone(),
        trans: TransitionCoefficients::new(specs[1].coefficients.clone(), loss, config.loss_mode)?,
        sparsity,
    })
}

impl ChainSampler {
    pub fn new(
        dataset: &Dataset,
        config: &FitConfig,
        q_template: Option<&QMatrixSet>,
        chain: usize,
    ) -> Result<Self> {
        config.validate()?;
        let state = initial_state(dataset, config, q_template, chain)?;
        Self::from_state(state, config, chain)
    }

    /// Resumes from an explicit state.
    pub fn from_state(state: ParameterState, config: &FitConfig, chain: usize) -> Result<Self> {
        config.validate()?;
        let k = state.alpha.n_attributes();
        let c = state.init.n_covariates();
        let specs = regression_specs(config, k, c)?;
        let proposals = [
            vec![AdaptiveProposal::new(c + 1); k],
            vec![AdaptiveProposal::new(c + 1); k],
            vec![AdaptiveProposal::new(c + 1); k],
        ];
        let q_sampled = config.q_mode != QMode::Fixed && !state.q.all_fixed();
        Ok(ChainSampler {
            state,
            config: config.clone(),
            key: ChainKey::new(config.seed, chain),
            specs,
            proposals,
            warmup_rates: [Vec::new(), Vec::new(), Vec::new()],
            q_sampled,
        })
    }

    pub fn q_sampled(&self) -> bool {
        self.q_sampled
    }

    /// One full sweep: paths, items, Q rows, theta, then the three
    /// regressions.
    pub fn sweep(&mut self, dataset: &Dataset, iteration: u64) -> Result<()> {
        let cfg = &self.config;
        let model = cfg.measurement_model;
        let st = &mut self.state;
        let cache = build_pattern_cache(&st.q, &st.items, model)?;
        update_all_paths(
            &self.key,
            iteration,
            dataset,
            &cache,
            &st.init,
            &st.trans,
            st.alpha.patterns_mut(),
        );
        let tally = ResponseTally::new(dataset, &st.alpha);
        let mut rng = self.key.stream(iteration, Block::Items, 0);
        update_items(&mut rng, &mut st.items, &st.q, &tally, model, cfg.monotone_items);
        if self.q_sampled {
            let mut rng = self.key.stream(iteration, Block::QRows, 0);
            update_q_rows(
                &mut rng,
                &mut st.q,
                &mut st.items,
                &tally,
                model,
                cfg.monotone_items,
                st.sparsity.theta,
                cfg.identifiability_min_items_per_attribute,
            );
            let mut rng = self.key.stream(iteration, Block::Theta, 0);
            update_theta(&mut rng, &st.q, &mut st.sparsity);
        }
        let z = dataset.covariates();
        let blocks = [Block::Beta, Block::Gamma01, Block::Gamma10];
        for (m, kind) in KINDS.iter().enumerate() {
            let coeffs = match kind {
                RegressionKind::Initial => &mut st.init,
                RegressionKind::Gain => &mut st.trans.gain,
                RegressionKind::Loss => match st.trans.loss.as_mut() {
                    Some(l) => l,
                    None => continue,
                },
            };
            let mut rng = self.key.stream(iteration, blocks[m], 0);
            update_regression(
                &mut rng,
                coeffs,
                &mut self.proposals[m],
                &st.alpha,
                *kind,
                z,
                &self.specs[m],
                cfg.regression_steps,
            );
        }
        Ok(())
    }

    /// Stops proposal adaptation and remembers warm-up acceptance rates.
    pub fn freeze_adaptation(&mut self) {
        for m in 0..3 {
            self.warmup_rates[m] = self.proposals[m].iter().map(|p| p.acceptance_rate()).collect();
            self.proposals[m].iter_mut().for_each(|p| p.freeze());
        }
    }

    pub fn acceptance(&self) -> Vec<AcceptanceRecord> {
        let mut out = Vec::new();
        for (m, kind) in KINDS.iter().enumerate() {
            if *kind == RegressionKind::Loss && self.state.trans.loss.is_none() {
                continue;
            }
            for (k, p) in self.proposals[m].iter().enumerate() {
                out.push(AcceptanceRecord {
                    kind: *kind,
                    attribute: k,
                    warmup_rate: self.warmup_rates[m].get(k).copied().unwrap_or(f64::NAN),
                    sampling_rate: p.acceptance_rate(),
                });
            }
        }
        out
    }
}

/// Kept draws and running accumulators of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub chain: usize,
    /// Iteration number (1-based, counting warm-up) of each kept draw.
    pub iterations: Vec<usize>,
    /// One row per kept draw, in the order of the draw names.
    pub values: Vec<Vec<f64>>,
    /// Q rows (`time * J + item`) per kept draw; empty when Q is fixed.
    pub q_rows: Vec<Vec<Pattern>>,
    /// Full attribute paths per kept draw when tracing is enabled.
    pub alpha_trace: Vec<Vec<Pattern>>,
    /// Kept draws with the attribute mastered, `(person * T + time) * K + k`.
    pub mastery_counts: Vec<u32>,
    /// Sum over draws of the share of persons in each pattern, `time * 2^K + p`.
    pub pattern_mass: Vec<f64>,
    /// Sum over draws of success probabilities, `(time * J + item) * 2^K + p`.
    pub item_success: Vec<f64>,
    pub acceptance: Vec<AcceptanceRecord>,
}

impl ChainDraws {
    pub fn n_draws(&self) -> usize {
        self.values.len()
    }
}

/// Draws of all chains of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub dims: DatasetDimensions,
    pub layout: DrawLayout,
    pub names: Vec<String>,
    /// Starting Q of chain 0 (the known Q in fixed mode) with its mask.
    pub q_template: QMatrixSet,
    pub chains: Vec<ChainDraws>,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.n_draws()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn chains(&self) -> &[ChainDraws] {
        &self.chains
    }

    pub fn q_sampled(&self) -> bool {
        self.layout.q_sampled
    }

    pub fn q_template(&self) -> &QMatrixSet {
        &self.q_template
    }

    /// Per-chain trace of parameter `index`.
    pub fn trace(&self, index: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.values.iter().map(|v| v[index]).collect())
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Pooled posterior mean of each attribute pattern's share, per time.
    pub fn pattern_distribution(&self) -> Vec<Vec<f64>> {
        let p = self.dims.n_patterns();
        let total = self.n_draws() as f64;
        (0..self.dims.n_times)
            .map(|t| {
                (0..p)
                    .map(|pp| self.chains.iter().map(|c| c.pattern_mass[t * p + pp]).sum::<f64>() / total)
                    .collect()
            })
            .collect()
    }

    /// Pooled posterior mean success probability of every item and time for
    /// each full attribute pattern, indexed `time * J + item`.
    pub fn item_success(&self) -> Vec<Vec<f64>> {
        let p = self.dims.n_patterns();
        let total = self.n_draws() as f64;
        let n = self.dims.n_items * self.dims.n_times;
        (0..n)
            .map(|idx| {
                (0..p)
                    .map(|pp| self.chains.iter().map(|c| c.item_success[idx * p + pp]).sum::<f64>() / total)
                    .collect()
            })
            .collect()
    }
}

fn success_table(state: &ParameterState, model: MeasurementModel, n_patterns: usize) -> Vec<f64> {
    let q = &state.q;
    let (j, t) = (q.n_items(), q.n_times());
    let mut out = Vec::with_capacity(j * t * n_patterns);
    for tt in 0..t {
        for jj in 0..j {
            let row = q.row(jj, tt);
            for p in 0..n_patterns {
                out.push(state.items.success_probability(model, row, p as Pattern, jj, tt, j));
            }
        }
    }
    out
}

/// Runs one chain from its own starting values.
pub fn run_chain(
    dataset: &Dataset,
    config: &FitConfig,
    q_template: Option<&QMatrixSet>,
    chain: usize,
) -> Result<ChainDraws> {
    let mut sampler = ChainSampler::new(dataset, config, q_template, chain)?;
    let d = *dataset.dims();
    let layout = layout_for(&d, config, sampler.q_sampled());
    let n_patterns = d.n_patterns();
    let mut draws = ChainDraws {
        chain,
        iterations: Vec::with_capacity(config.n_kept),
        values: Vec::with_capacity(config.n_kept),
        q_rows: Vec::new(),
        alpha_trace: Vec::new(),
        mastery_counts: vec![0; d.n_persons * d.n_times * d.n_attributes],
        pattern_mass: vec![0.0; d.n_times * n_patterns],
        item_success: vec![0.0; d.n_items * d.n_times * n_patterns],
        acceptance: Vec::new(),
    };
    if config.n_warmup == 0 {
        sampler.freeze_adaptation();
    }
    let total = config.n_warmup + config.n_sampling_iterations();
    let share = 1.0 / d.n_persons as f64;
    for iter in 0..total {
        sampler.sweep(dataset, iter as u64 + 1)?;
        if iter + 1 == config.n_warmup {
            sampler.freeze_adaptation();
        }
        if iter < config.n_warmup || !(iter + 1 - config.n_warmup).is_multiple_of(config.thin) {
            continue;
        }
        let st = &sampler.state;
        draws.iterations.push(iter + 1);
        draws.values.push(layout.flatten(st));
        if layout.q_sampled {
            draws.q_rows.push(st.q.rows().to_vec());
        }
        if config.record_alpha_trace {
            draws.alpha_trace.push(st.alpha.patterns().to_vec());
        }
        for (idx, &p) in st.alpha.patterns().iter().enumerate() {
            let base = idx * d.n_attributes;
            for k in 0..d.n_attributes {
                draws.mastery_counts[base + k] += (p >> k) & 1;
            }
            let t = idx % d.n_times;
            draws.pattern_mass[t * n_patterns + p as usize] += share;
        }
        for (acc, v) in draws
            .item_success
            .iter_mut()
            .zip(success_table(st, config.measurement_model, n_patterns))
        {
            *acc += v;
        }
    }
    draws.acceptance = sampler.acceptance();
    Ok(draws)
}

fn layout_for(d: &DatasetDimensions, config: &FitConfig, q_sampled: bool) -> DrawLayout {
    DrawLayout {
        n_items: d.n_items,
        n_attributes: d.n_attributes,
        n_times: d.n_times,
        n_covariates: d.n_covariates,
        model: config.measurement_model,
        q_sampled,
        loss_mode: config.loss_mode,
    }
}

/// Runs all chains concurrently. Results do not depend on thread count or
/// chain launch order.
pub fn fit(dataset: &Dataset, config: &FitConfig, q_template: Option<&QMatrixSet>) -> Result<PosteriorDraws> {
    config.validate()?;
    let mut warnings = Vec::new();
    if let Some(q) = q_template {
        if q.n_items() != dataset.dims().n_items
            || q.n_attributes() != dataset.dims().n_attributes
            || q.n_times() != dataset.dims().n_times
        {
            return Err(Error::Shape("Q-matrix does not match the data".into()));
        }
        if config.q_mode == QMode::Fixed {
            for t in 0..q.n_times() {
                let r = check_identifiability(
                    q.matrix(t),
                    q.n_attributes(),
                    config.identifiability_min_items_per_attribute,
                );
                for v in r.violations {
                    warnings.push(format!("fixed Q at time {}: {}", t + 1, v.detail));
                }
            }
        }
    }
    let probe = ChainSampler::new(dataset, config, q_template, 0)?;
    let q_template_out = probe.state.q.clone();
    let layout = layout_for(dataset.dims(), config, probe.q_sampled());
    let chains = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(dataset, config, q_template, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        dims: *dataset.dims(),
        layout,
        names: layout.names(),
        q_template: q_template_out,
        chains,
        warnings,
    })
}

/// Posterior mastery probabilities and thresholded profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasteryEstimates {
    pub n_persons: usize,
    pub n_attributes: usize,
    pub n_times: usize,
    /// `(person * T + time) * K + k`
    pub probabilities: Vec<f64>,
    /// 1 iff probability > 0.5; exactly 0.5 maps to 0.
    pub profiles: Vec<u8>,
}

impl MasteryEstimates {
    pub fn probability(&self, person: usize, attribute: usize, time: usize) -> f64 {
        self.probabilities[(person * self.n_times + time) * self.n_attributes + attribute]
    }

    pub fn profile(&self, person: usize, attribute: usize, time: usize) -> u8 {
        self.profiles[(person * self.n_times + time) * self.n_attributes + attribute]
    }
}

pub fn posterior_mastery_probabilities(draws: &PosteriorDraws) -> Result<MasteryEstimates> {
    let total = draws.n_draws();
    if total == 0 {
        return Err(Error::EmptyDraws);
    }
    let d = draws.dims;
    let len = d.n_persons * d.n_times * d.n_attributes;
    let probabilities: Vec<f64> = (0..len)
        .map(|idx| {
            draws.chains.iter().map(|c| c.mastery_counts[idx] as u64).sum::<u64>() as f64 / total as f64
        })
        .collect();
    let profiles = probabilities.iter().map(|&p| (p > 0.5) as u8).collect();
    Ok(MasteryEstimates {
        n_persons: d.n_persons,
        n_attributes: d.n_attributes,
        n_times: d.n_times,
        probabilities,
        profiles,
    })
}
