//! Covariate models for initial mastery and for transitions between states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bit, InitialModelCoefficients, LogitCoefficients, LossMode, Pattern, TransitionCoefficients};

/// Logistic function that never returns exactly 0 or 1 for finite input
/// short of the double range.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln logistic(x)` without forming the probability.
#[inline]
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Log-likelihood of a Bernoulli outcome with logit `x`.
#[inline]
pub fn bernoulli_logit_loglik(y: u8, x: f64) -> f64 {
    if y == 1 {
        log_logistic(x)
    } else {
        log_logistic(-x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Gain,
    Loss,
}

pub fn initial_mastery_prob(coeffs: &InitialModelCoefficients, z: &[f64], attribute: usize) -> f64 {
    logistic(coeffs.linear_predictor(attribute, z))
}

pub fn transition_prob(
    coeffs: &TransitionCoefficients,
    z: &[f64],
    attribute: usize,
    direction: Direction,
) -> Result<f64> {
    match direction {
        Direction::Gain => Ok(logistic(coeffs.gain.linear_predictor(attribute, z))),
        Direction::Loss => match (&coeffs.loss, coeffs.loss_mode) {
            (Some(l), LossMode::Free | LossMode::SoftMonotone) => {
                Ok(logistic(l.linear_predictor(attribute, z)))
            }
            _ => Err(Error::AbsorbingLoss),
        },
    }
}

/// Log of P(next state | previous state) for one attribute. Absorbing mode
/// assigns `-inf` to a loss.
#[inline]
pub fn transition_log_prob(
    coeffs: &TransitionCoefficients,
    z: &[f64],
    attribute: usize,
    prev: u8,
    next: u8,
) -> f64 {
    if prev == 0 {
        bernoulli_logit_loglik(next, coeffs.gain.linear_predictor(attribute, z))
    } else {
        match &coeffs.loss {
            Some(l) => bernoulli_logit_loglik(1 - next, l.linear_predictor(attribute, z)),
            None => {
                if next == 1 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// Log prior of one person's path (`path[t]` is the pattern at time t).
pub fn path_log_prior(
    path: &[Pattern],
    n_attributes: usize,
    init: &InitialModelCoefficients,
    trans: &TransitionCoefficients,
    z: &[f64],
) -> f64 {
    let mut lp = 0.0;
    for k in 0..n_attributes {
        lp += bernoulli_logit_loglik(bit(path[0], k), init.linear_predictor(k, z));
        for w in path.windows(2) {
            lp += transition_log_prob(trans, z, k, bit(w[0], k), bit(w[1], k));
        }
    }
    lp
}

/// Coefficients of one logistic model together with their normal prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModelSpec {
    pub coefficients: LogitCoefficients,
    pub intercept_prior_mean: f64,
    pub slope_prior_mean: f64,
    pub prior_sd: f64,
}

impl LogitModelSpec {
    pub fn new(
        coefficients: LogitCoefficients,
        intercept_prior_mean: f64,
        prior_sd: f64,
    ) -> Result<Self> {
        if !(prior_sd > 0.0 && prior_sd.is_finite()) {
            return Err(Error::ParameterRange(format!("prior sd {prior_sd} must be positive")));
        }
        Ok(LogitModelSpec {
            coefficients,
            intercept_prior_mean,
            slope_prior_mean: 0.0,
            prior_sd,
        })
    }

    /// Prior means of one attribute's block (intercept first).
    pub fn prior_means(&self) -> Vec<f64> {
        let mut m = vec![self.slope_prior_mean; self.coefficients.n_covariates() + 1];
        m[0] = self.intercept_prior_mean;
        m
    }

    /// Normal log density of a block, up to a constant.
    pub fn block_log_prior(&self, block: &[f64]) -> f64 {
        let v = self.prior_sd * self.prior_sd;
        block
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let m = if i == 0 {
                    self.intercept_prior_mean
                } else {
                    self.slope_prior_mean
                };
                -0.5 * (b - m) * (b - m) / v
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioEntry {
    pub name: String,
    pub coefficient: f64,
    pub odds_ratio: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub significant: bool,
}

/// Exponentiates coefficients and interval endpoints. An entry is significant
/// when its interval excludes 1 on the odds scale.
pub fn coefficients_to_odds_ratios(coefficients: &[(String, f64, f64, f64)]) -> Vec<OddsRatioEntry> {
    coefficients
        .iter()
        .map(|(name, c, lo, hi)| {
            let (l, h) = (lo.exp(), hi.exp());
            OddsRatioEntry {
                name: name.clone(),
                coefficient: *c,
                odds_ratio: c.exp(),
                ci_lo: l,
                ci_hi: h,
                significant: !(l <= 1.0 && 1.0 <= h),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zeros(k: usize, c: usize) -> LogitCoefficients {
        LogitCoefficients::constant(k, c, 0.0)
    }

    fn soft(k: usize, c: usize) -> TransitionCoefficients {
        TransitionCoefficients::new(zeros(k, c), Some(zeros(k, c)), LossMode::SoftMonotone).unwrap()
    }

    #[test]
    fn initial_mastery_examples() {
        assert_eq!(initial_mastery_prob(&zeros(2, 3), &[1.0, -2.0, 0.3], 1), 0.5);
        let c = LogitCoefficients::new(0, vec![0.469f64.ln()], vec![]).unwrap();
        let p = initial_mastery_prob(&c, &[], 0);
        assert!((p - 0.469 / 1.469).abs() < 1e-12);
        assert!((p - 0.3193).abs() < 5e-5);
        let far = LogitCoefficients::new(0, vec![-745.0], vec![]).unwrap();
        let p = initial_mastery_prob(&far, &[], 0);
        assert!(p > 0.0 && p.ln().is_finite());
    }

    #[test]
    fn log_logistic_is_stable() {
        assert!((log_logistic(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_logistic(800.0) <= 0.0 && log_logistic(800.0) > -1e-300);
        for x in [-30.0, -3.0, 0.0, 2.5, 20.0] {
            assert!((log_logistic(x) - logistic(x).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_examples() {
        let t = soft(1, 1);
        assert_eq!(transition_prob(&t, &[0.0], 0, Direction::Gain).unwrap(), 0.5);
        let gain = LogitCoefficients::new(1, vec![0.0], vec![4.147f64.ln()]).unwrap();
        let t = TransitionCoefficients::new(gain, None, LossMode::Absorbing).unwrap();
        let p = transition_prob(&t, &[1.0], 0, Direction::Gain).unwrap();
        assert!((p - 4.147 / 5.147).abs() < 1e-12);
        assert!((p - 0.8057).abs() < 5e-5);
        assert!(matches!(
            transition_prob(&t, &[1.0], 0, Direction::Loss),
            Err(Error::AbsorbingLoss)
        ));
        assert_eq!(transition_log_prob(&t, &[1.0], 0, 1, 0), f64::NEG_INFINITY);
        assert_eq!(transition_log_prob(&t, &[1.0], 0, 1, 1), 0.0);
    }

    #[test]
    fn path_prior_small_cases() {
        let init = zeros(1, 0);
        let t = soft(1, 0);
        assert!((path_log_prior(&[1], 1, &init, &t, &[]) - 0.5f64.ln()).abs() < 1e-15);
        assert!((path_log_prior(&[0, 1], 1, &init, &t, &[]) - 2.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    fn random_models(rng: &mut ChaCha8Rng, k: usize, c: usize, mode: LossMode) -> (LogitCoefficients, TransitionCoefficients) {
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.5..1.5)).collect() };
        let init = LogitCoefficients::new(c, draw(k), draw(k * c)).unwrap();
        let gain = LogitCoefficients::new(c, draw(k), draw(k * c)).unwrap();
        let loss = if mode == LossMode::Absorbing {
            None
        } else {
            Some(LogitCoefficients::new(c, draw(k), draw(k * c)).unwrap())
        };
        (init, TransitionCoefficients::new(gain, loss, mode).unwrap())
    }

    #[test]
    fn path_prior_matches_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (init, trans) = random_models(&mut rng, 2, 2, LossMode::Free);
        let z = [0.4, -1.1];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        for code in 0..64u32 {
            let path: Vec<Pattern> = (0..3).map(|t| (code >> (2 * t)) & 3).collect();
            let mut prod = 1.0;
            for k in 0..2 {
                let x0 = init.intercepts[k] + init.slopes[k * 2] * z[0] + init.slopes[k * 2 + 1] * z[1];
                let a0 = (path[0] >> k) & 1;
                prod *= if a0 == 1 { sig(x0) } else { 1.0 - sig(x0) };
                for t in 1..3 {
                    let (a, b) = ((path[t - 1] >> k) & 1, (path[t] >> k) & 1);
                    let m = if a == 0 { &trans.gain } else { trans.loss.as_ref().unwrap() };
                    let x = m.intercepts[k] + m.slopes[k * 2] * z[0] + m.slopes[k * 2 + 1] * z[1];
                    let p_event = sig(x);
                    prod *= match (a, b) {
                        (0, 1) | (1, 0) => p_event,
                        _ => 1.0 - p_event,
                    };
                }
            }
            let lp = path_log_prior(&path, 2, &init, &trans, &z);
            assert!((lp.exp() - prod).abs() < 1e-14, "path {code}");
        }
    }

    proptest! {
        #[test]
        fn path_prior_normalizes(seed in 0u64..1000, absorbing in any::<bool>()) {
            let mode = if absorbing { LossMode::Absorbing } else { LossMode::SoftMonotone };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (init, trans) = random_models(&mut rng, 2, 1, mode);
            let z = [rng.random_range(-2.0..2.0)];
            let mut total = 0.0;
            for code in 0..64u32 {
                let path: Vec<Pattern> = (0..3).map(|t| (code >> (2 * t)) & 3).collect();
                let lp = path_log_prior(&path, 2, &init, &trans, &z);
                let has_loss = path.windows(2).any(|w| w[0] & !w[1] != 0);
                if absorbing && has_loss {
                    prop_assert_eq!(lp, f64::NEG_INFINITY);
                } else {
                    prop_assert!(lp.is_finite());
                }
                total += lp.exp();
            }
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn significance_flag_agrees_across_scales(lo in -3.0f64..3.0, width in 0.0f64..3.0) {
            let hi = lo + width;
            let r = &coefficients_to_odds_ratios(&[("x".into(), lo, lo, hi)])[0];
            let log_scale = !(lo <= 0.0 && 0.0 <= hi);
            prop_assert_eq!(r.significant, log_scale);
        }
    }

    #[test]
    fn odds_ratio_examples() {
        let r = coefficients_to_odds_ratios(&[
            ("zero".into(), 0.0, -0.5, 0.5),
            ("neg".into(), -0.8, -1.38, -0.286),
            ("rt".into(), 12.974f64.ln(), 2.0, 3.0),
        ]);
        assert_eq!(r[0].odds_ratio, 1.0);
        assert!(!r[0].significant);
        assert!((r[1].ci_lo - 0.251).abs() < 1e-3 && (r[1].ci_hi - 0.751).abs() < 1e-3);
        assert!(r[1].significant);
        assert!((r[2].odds_ratio - 12.974).abs() < 1e-12);
    }

    #[test]
    fn spec_prior_mean_and_density() {
        let s = LogitModelSpec::new(zeros(1, 2), -2.0, 1.0).unwrap();
        assert_eq!(s.prior_means(), vec![-2.0, 0.0, 0.0]);
        assert_eq!(s.block_log_prior(&[-2.0, 0.0, 0.0]), 0.0);
        assert!((s.block_log_prior(&[-1.0, 1.0, 0.0]) + 1.0).abs() < 1e-15);
        assert!(LogitModelSpec::new(zeros(1, 2), 0.0, 0.0).is_err());
    }
}
