//! Ideal responses and response probabilities for the DINA, DINO and GDINA
//! measurement models, plus a per-pattern likelihood cache.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AttributeProfilePath, Dataset, GdinaItemCoefficients, ItemParams, MeasurementModel, Pattern,
    QMatrixSet,
};

/// Guard applied to probabilities only when taking logarithms.
const LOG_GUARD: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// Conjunctive: every required attribute must be mastered.
    And,
    /// Disjunctive: any required attribute suffices.
    Or,
}

impl Gate {
    pub fn for_model(model: MeasurementModel) -> Gate {
        match model {
            MeasurementModel::Dino => Gate::Or,
            _ => Gate::And,
        }
    }
}

#[inline]
pub fn ideal_response(alpha: Pattern, q_row: Pattern, gate: Gate) -> u8 {
    match gate {
        Gate::And => (alpha & q_row == q_row) as u8,
        Gate::Or => (alpha & q_row != 0) as u8,
    }
}

pub fn dina_probability(eta: u8, g: f64, s: f64) -> Result<f64> {
    if !(g > 0.0 && g < 1.0 && s > 0.0 && s < 1.0) {
        return Err(Error::ParameterRange(format!(
            "g = {g}, s = {s} must lie in (0, 1)"
        )));
    }
    Ok(if eta == 1 { 1.0 - s } else { g })
}

pub fn gdina_probability(
    alpha: Pattern,
    q_row: Pattern,
    lambda: &GdinaItemCoefficients,
) -> Result<f64> {
    if lambda.required() != q_row {
        return Err(Error::InfeasibleGdina(format!(
            "coefficients indexed for required set {:#b}, q-row is {:#b}",
            lambda.required(),
            q_row
        )));
    }
    Ok(lambda.reduced_probability(lambda.reduce(alpha)))
}

/// Item parameters for every (item, time), in the form the measurement model
/// needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ItemParameters {
    GuessSlip(ItemParams),
    /// Indexed by `time * J + item`.
    Gdina(Vec<GdinaItemCoefficients>),
}

impl ItemParameters {
    /// P(Y = 1 | alpha) for item (j, t) given its current q-row.
    #[inline]
    pub fn success_probability(
        &self,
        model: MeasurementModel,
        q_row: Pattern,
        alpha: Pattern,
        item: usize,
        time: usize,
        n_items: usize,
    ) -> f64 {
        match self {
            ItemParameters::GuessSlip(p) => {
                let eta = ideal_response(alpha, q_row, Gate::for_model(model));
                if eta == 1 {
                    1.0 - p.slipping(item, time)
                } else {
                    p.guessing(item, time)
                }
            }
            ItemParameters::Gdina(coeffs) => {
                let c = &coeffs[time * n_items + item];
                debug_assert_eq!(c.required(), q_row);
                c.reduced_probability(c.reduce(alpha))
            }
        }
    }
}

/// `P(Y=1 | pattern)` for every (item, time) and all `2^K` patterns, with the
/// matching guarded logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternLikelihoodCache {
    n_items: usize,
    n_times: usize,
    n_patterns: usize,
    prob: Vec<f64>,
    log_p: Vec<f64>,
    log_1mp: Vec<f64>,
}

impl PatternLikelihoodCache {
    #[inline]
    fn offset(&self, item: usize, time: usize) -> usize {
        (time * self.n_items + item) * self.n_patterns
    }

    pub fn n_patterns(&self) -> usize {
        self.n_patterns
    }

    /// Success probabilities of item (j, t) over all patterns.
    pub fn probabilities(&self, item: usize, time: usize) -> &[f64] {
        let o = self.offset(item, time);
        &self.prob[o..o + self.n_patterns]
    }

    #[inline]
    pub fn probability(&self, item: usize, time: usize, pattern: Pattern) -> f64 {
        self.prob[self.offset(item, time) + pattern as usize]
    }

    /// Log-probability of response `y` for item (j, t) under `pattern`.
    #[inline]
    pub fn log_response(&self, item: usize, time: usize, pattern: Pattern, y: u8) -> f64 {
        let idx = self.offset(item, time) + pattern as usize;
        if y == 1 {
            self.log_p[idx]
        } else {
            self.log_1mp[idx]
        }
    }

    /// Recomputes the entries of a single (item, time).
    pub fn update_item(
        &mut self,
        q: &QMatrixSet,
        items: &ItemParameters,
        model: MeasurementModel,
        item: usize,
        time: usize,
    ) {
        let o = self.offset(item, time);
        let q_row = q.row(item, time);
        for p in 0..self.n_patterns {
            let prob = items.success_probability(model, q_row, p as Pattern, item, time, self.n_items);
            self.prob[o + p] = prob;
            self.log_p[o + p] = prob.max(LOG_GUARD).ln();
            self.log_1mp[o + p] = (1.0 - prob).max(LOG_GUARD).ln();
        }
    }
}

pub fn build_pattern_cache(
    q: &QMatrixSet,
    items: &ItemParameters,
    model: MeasurementModel,
) -> Result<PatternLikelihoodCache> {
    let n_items = q.n_items();
    let n_times = q.n_times();
    match (items, model) {
        (ItemParameters::GuessSlip(p), MeasurementModel::Dina | MeasurementModel::Dino) => {
            if p.n_items() != n_items || p.n_times() != n_times {
                return Err(Error::Shape("item parameters do not match the Q-matrix".into()));
            }
        }
        (ItemParameters::Gdina(c), MeasurementModel::Gdina) => {
            if c.len() != n_items * n_times {
                return Err(Error::Shape("GDINA coefficients do not match the Q-matrix".into()));
            }
            for t in 0..n_times {
                for j in 0..n_items {
                    if c[t * n_items + j].required() != q.row(j, t) {
                        return Err(Error::InfeasibleGdina(format!(
                            "item {j} time {t}: coefficients do not match the q-row"
                        )));
                    }
                }
            }
        }
        _ => {
            return Err(Error::Config(format!(
                "item parameters do not fit the {model:?} measurement model"
            )))
        }
    }
    let n_patterns = 1usize << q.n_attributes();
    let size = n_items * n_times * n_patterns;
    let mut cache = PatternLikelihoodCache {
        n_items,
        n_times,
        n_patterns,
        prob: vec![0.0; size],
        log_p: vec![0.0; size],
        log_1mp: vec![0.0; size],
    };
    for t in 0..n_times {
        for j in 0..n_items {
            cache.update_item(q, items, model, j, t);
        }
    }
    Ok(cache)
}

/// Log-likelihood of one person's responses at one time point given the
/// current profile. Missing cells contribute nothing; items are summed in
/// index order.
pub fn person_loglik(
    dataset: &Dataset,
    alpha_path: &AttributeProfilePath,
    cache: &PatternLikelihoodCache,
    person: usize,
    time: usize,
) -> f64 {
    let pattern = alpha_path.pattern(person, time);
    let mut ll = 0.0;
    for (j, &y) in dataset.slice(person, time).iter().enumerate() {
        if y <= 1 {
            ll += cache.log_response(j, time, pattern, y);
        }
    }
    ll
}

/// Log-likelihood of one person's responses at time `time` for every pattern.
pub(crate) fn pattern_logliks(
    dataset: &Dataset,
    cache: &PatternLikelihoodCache,
    person: usize,
    time: usize,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let n_patterns = cache.n_patterns;
    for (j, &y) in dataset.slice(person, time).iter().enumerate() {
        if y > 1 {
            continue;
        }
        let o = cache.offset(j, time);
        let table = if y == 1 {
            &cache.log_p[o..o + n_patterns]
        } else {
            &cache.log_1mp[o..o + n_patterns]
        };
        for (acc, l) in out.iter_mut().zip(table) {
            *acc += l;
        }
    }
}
