//! Conjugate item-parameter updates.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::measurement::{ideal_response, Gate, ItemParameters};
use crate::model::{reduce_pattern, GdinaItemCoefficients, ItemParams, MeasurementModel, Pattern, QMatrixSet};

use super::state::ResponseTally;

/// Rejection attempts for the `g < 1 - s` constraint before the current
/// values are kept.
const MONOTONE_TRIES: usize = 1000;

/// Counts of (ideal response, observed response) for one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EtaCounts {
    /// `n[eta][y]`
    pub n: [[u64; 2]; 2],
}

impl EtaCounts {
    pub fn from_tally(counts: &[[u32; 2]], q_row: Pattern, gate: Gate) -> Self {
        let mut n = [[0u64; 2]; 2];
        for (p, c) in counts.iter().enumerate() {
            let eta = ideal_response(p as Pattern, q_row, gate) as usize;
            n[eta][0] += c[0] as u64;
            n[eta][1] += c[1] as u64;
        }
        EtaCounts { n }
    }

    /// Beta shape parameters of the full conditionals of g and s under flat
    /// priors: g ~ Beta(1 + n(eta=0,y=1), 1 + n(eta=0,y=0)) and
    /// s ~ Beta(1 + n(eta=1,y=0), 1 + n(eta=1,y=1)).
    pub fn posterior_shapes(&self) -> ((f64, f64), (f64, f64)) {
        let n = &self.n;
        (
            (1.0 + n[0][1] as f64, 1.0 + n[0][0] as f64),
            (1.0 + n[1][0] as f64, 1.0 + n[1][1] as f64),
        )
    }
}

fn beta_draw<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("positive Beta shapes").sample(rng)
}

/// Unconstrained conjugate draw of (g, s) for one item.
pub(crate) fn draw_guess_slip<R: Rng + ?Sized>(rng: &mut R, counts: &[[u32; 2]], q_row: Pattern, gate: Gate) -> (f64, f64) {
    let ((ga, gb), (sa, sb)) = EtaCounts::from_tally(counts, q_row, gate).posterior_shapes();
    (beta_draw(rng, ga, gb), beta_draw(rng, sa, sb))
}

pub(crate) fn update_guess_slip<R: Rng + ?Sized>(
    rng: &mut R,
    params: &mut ItemParams,
    q: &QMatrixSet,
    tally: &ResponseTally,
    model: MeasurementModel,
    monotone: bool,
) {
    let gate = Gate::for_model(model);
    for t in 0..q.n_times() {
        for j in 0..q.n_items() {
            let counts = EtaCounts::from_tally(tally.item(j, t), q.row(j, t), gate);
            let ((ga, gb), (sa, sb)) = counts.posterior_shapes();
            let mut draw = (beta_draw(rng, ga, gb), beta_draw(rng, sa, sb));
            if monotone {
                let mut tries = 1;
                while draw.0 >= 1.0 - draw.1 && tries < MONOTONE_TRIES {
                    draw = (beta_draw(rng, ga, gb), beta_draw(rng, sa, sb));
                    tries += 1;
                }
                if draw.0 >= 1.0 - draw.1 {
                    draw = (params.guessing(j, t), params.slipping(j, t));
                }
            }
            params.set(j, t, draw.0, draw.1);
        }
    }
}

/// Success counts `[n(y=0), n(y=1)]` per reduced latent group of `q_row`.
pub(crate) fn group_counts(counts: &[[u32; 2]], q_row: Pattern) -> Vec<[u64; 2]> {
    let mut g = vec![[0u64; 2]; 1 << q_row.count_ones()];
    for (p, c) in counts.iter().enumerate() {
        let l = reduce_pattern(p as Pattern, q_row) as usize;
        g[l][0] += c[0] as u64;
        g[l][1] += c[1] as u64;
    }
    g
}

/// Draws group success probabilities from their Beta(1 + n1, 1 + n0)
/// conditionals and maps them to GDINA coefficients.
pub(crate) fn draw_gdina<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &[[u32; 2]],
    q_row: Pattern,
) -> GdinaItemCoefficients {
    let probs: Vec<f64> = group_counts(counts, q_row)
        .iter()
        .map(|c| beta_draw(rng, 1.0 + c[1] as f64, 1.0 + c[0] as f64))
        .collect();
    GdinaItemCoefficients::from_group_probabilities(q_row, &probs)
        .expect("group probabilities in (0, 1) give feasible coefficients")
}

pub(crate) fn update_items<R: Rng + ?Sized>(
    rng: &mut R,
    items: &mut ItemParameters,
    q: &QMatrixSet,
    tally: &ResponseTally,
    model: MeasurementModel,
    monotone: bool,
) {
    match items {
        ItemParameters::GuessSlip(p) => update_guess_slip(rng, p, q, tally, model, monotone),
        ItemParameters::Gdina(coeffs) => {
            let j = q.n_items();
            for t in 0..q.n_times() {
                for jj in 0..j {
                    coeffs[t * j + jj] = draw_gdina(rng, tally.item(jj, t), q.row(jj, t));
                }
            }
        }
    }
}
