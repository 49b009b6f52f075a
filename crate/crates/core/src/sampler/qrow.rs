//! Row-wise Gibbs update of the Q-matrix.

use rand::Rng;
use statrs::function::beta::ln_beta;

use crate::measurement::{Gate, ItemParameters};
use crate::model::{MeasurementModel, Pattern, QMatrixSet};
use crate::structure::IdentifiabilityGuard;

use super::alpha::{draw_categorical, normalize_log_weights};
use super::items::{draw_gdina, draw_guess_slip, group_counts, EtaCounts};
use super::state::ResponseTally;

const LOG_GUARD: f64 = f64::EPSILON;

fn guarded_ln(x: f64) -> f64 {
    x.max(LOG_GUARD).ln()
}

/// Log-likelihood of item (j, t)'s responses if its row were `candidate`.
/// GDINA coefficients are always integrated out under their flat priors;
/// guessing and slipping only when `collapsed`.
fn candidate_loglik(
    counts: &[[u32; 2]],
    candidate: Pattern,
    items: &ItemParameters,
    model: MeasurementModel,
    collapsed: bool,
    item: usize,
    time: usize,
) -> f64 {
    match items {
        ItemParameters::GuessSlip(_) if collapsed => {
            let e = EtaCounts::from_tally(counts, candidate, Gate::for_model(model));
            let ((ga, gb), (sa, sb)) = e.posterior_shapes();
            ln_beta(ga, gb) + ln_beta(sa, sb)
        }
        ItemParameters::GuessSlip(p) => {
            let e = EtaCounts::from_tally(counts, candidate, Gate::for_model(model));
            let (g, s) = (p.guessing(item, time), p.slipping(item, time));
            e.n[0][1] as f64 * guarded_ln(g)
                + e.n[0][0] as f64 * guarded_ln(1.0 - g)
                + e.n[1][1] as f64 * guarded_ln(1.0 - s)
                + e.n[1][0] as f64 * guarded_ln(s)
        }
        ItemParameters::Gdina(_) => group_counts(counts, candidate)
            .iter()
            .map(|c| ln_beta(1.0 + c[1] as f64, 1.0 + c[0] as f64))
            .sum(),
    }
}

/// Normalized full conditional of the row of item `item` at `time` over the
/// candidates that agree with fixed entries and keep the matrix identifiable.
/// In time-invariant mode the shared row's likelihood sums over all times.
///
/// With `collapsed`, guessing and slipping are integrated out under their
/// flat priors, so the row is drawn jointly with them.
#[allow(clippy::too_many_arguments)]
pub fn q_row_conditional(
    q: &QMatrixSet,
    items: &ItemParameters,
    tally: &ResponseTally,
    model: MeasurementModel,
    collapsed: bool,
    theta: f64,
    guard: &IdentifiabilityGuard,
    item: usize,
    time: usize,
) -> Vec<(Pattern, f64)> {
    let k = q.n_attributes();
    let mask = q.fixed_mask(item, time);
    let n_free = k as u32 - mask.count_ones();
    let current = q.row(item, time);
    let times: Vec<usize> = if q.time_invariant() {
        (0..q.n_times()).collect()
    } else {
        vec![time]
    };
    let (lt, l1t) = (guarded_ln(theta), guarded_ln(1.0 - theta));
    let mut cands = Vec::new();
    let mut logw = Vec::new();
    for c in 1..(1u32 << k) {
        if !q.admits(item, time, c) || !guard.admits(current, c) {
            continue;
        }
        let ones = (c & !mask).count_ones();
        let mut lw = ones as f64 * lt + (n_free - ones) as f64 * l1t;
        for &t in &times {
            lw += candidate_loglik(tally.item(item, t), c, items, model, collapsed, item, t);
        }
        cands.push(c);
        logw.push(lw);
    }
    normalize_log_weights(&mut logw);
    cands.into_iter().zip(logw).collect()
}

/// One pass over all rows with free entries, times outer, items inner.
/// Guessing and slipping are collapsed unless `monotone` constrains them;
/// the item's parameters are then redrawn given its new row.
#[allow(clippy::too_many_arguments)]
pub(crate) fn update_q_rows<R: Rng + ?Sized>(
    rng: &mut R,
    q: &mut QMatrixSet,
    items: &mut ItemParameters,
    tally: &ResponseTally,
    model: MeasurementModel,
    monotone: bool,
    theta: f64,
    min_items: usize,
) {
    let collapsed = !monotone;
    let k = q.n_attributes();
    for t in 0..q.n_distinct_times() {
        let mut guard = IdentifiabilityGuard::new(q.matrix(t), k, min_items);
        for j in 0..q.n_items() {
            if !q.row_is_free(j, t) {
                continue;
            }
            let cond = q_row_conditional(q, items, tally, model, collapsed, theta, &guard, j, t);
            let probs: Vec<f64> = cond.iter().map(|x| x.1).collect();
            let new = cond[draw_categorical(rng, &probs)].0;
            let old = q.row(j, t);
            guard.replace(old, new);
            q.set_row(j, t, new);
            let n = q.n_items();
            let times: Vec<usize> = if q.time_invariant() {
                (0..q.n_times()).collect()
            } else {
                vec![t]
            };
            match items {
                ItemParameters::Gdina(coeffs) => {
                    for tt in times {
                        coeffs[tt * n + j] = draw_gdina(rng, tally.item(j, tt), new);
                    }
                }
                ItemParameters::GuessSlip(p) if collapsed => {
                    for tt in times {
                        let (g, s) = draw_guess_slip(rng, tally.item(j, tt), new, Gate::for_model(model));
                        p.set(j, tt, g, s);
                    }
                }
                ItemParameters::GuessSlip(_) => {}
            }
        }
    }
}
