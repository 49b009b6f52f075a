//! Forward simulation of response panels from known parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{initial_mastery_prob, transition_prob, Direction};
use crate::error::{Error, Result};
use crate::measurement::ItemParameters;
use crate::model::{
    bit, AttributeProfilePath, CovariateMatrix, ItemParams, LogitCoefficients, LossMode, MeasurementModel, Pattern,
    QMatrixSet, ResponsePanel, TransitionCoefficients,
};

use super::design::{DesignCell, SimulationDesign};

/// Everything needed to run the generative model forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    pub model: MeasurementModel,
    pub q: QMatrixSet,
    pub items: ItemParameters,
    pub init: LogitCoefficients,
    pub trans: TransitionCoefficients,
}

/// Generating values and latent states of one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub cell: String,
    pub replication: usize,
    pub seed: u64,
    pub params: TrueParameters,
    pub alpha: AttributeProfilePath,
}

impl TruthRecord {
    /// Generating values under the names used in draw files. Q entries and
    /// theta are scored separately.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let p = &self.params;
        let (j, k, t) = (p.q.n_items(), p.q.n_attributes(), p.q.n_times());
        let c = p.init.n_covariates();
        let mut out = Vec::new();
        if let ItemParameters::GuessSlip(ip) = &p.items {
            for tt in 0..t {
                for jj in 0..j {
                    out.push((format!("g[{},{}]", jj + 1, tt + 1), ip.guessing(jj, tt)));
                }
            }
            for tt in 0..t {
                for jj in 0..j {
                    out.push((format!("s[{},{}]", jj + 1, tt + 1), ip.slipping(jj, tt)));
                }
            }
        }
        for kk in 0..k {
            out.push((format!("beta0[{}]", kk + 1), p.init.intercepts[kk]));
        }
        for kk in 0..k {
            for cc in 0..c {
                out.push((format!("betaZ[{},{}]", kk + 1, cc + 1), p.init.slope(kk, cc)));
            }
        }
        let blocks = [("gamma01", Some(&p.trans.gain)), ("gamma10", p.trans.loss.as_ref())];
        for (name, coeffs) in blocks {
            if let Some(co) = coeffs {
                for kk in 0..k {
                    for (cc, v) in co.block(kk).into_iter().enumerate() {
                        out.push((format!("{name}[{},{}]", kk + 1, cc), v));
                    }
                }
            }
        }
        out
    }
}

/// Builds the cell's generating parameters. Guessing and slipping are drawn
/// once per cell from a stream keyed by the design seed and the cell name.
pub fn true_parameters(design: &SimulationDesign, cell: &DesignCell) -> Result<TrueParameters> {
    let t = &design.truth;
    let (j, k, tt) = (cell.n_items, cell.n_attributes, cell.n_times);
    let c = t.n_covariates;
    let mut rng = ChaCha8Rng::seed_from_u64(design.cell_seed(cell, "items"));
    let n = j * tt;
    let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let guessing: Vec<f64> = (0..n).map(|_| draw(t.guess_range)).collect();
    let slipping: Vec<f64> = (0..n).map(|_| draw(t.slip_range)).collect();
    let items = ItemParams::new(j, tt, guessing, slipping, false)?;
    let own = |value: f64| -> Vec<f64> {
        let mut s = vec![0.0; k * c];
        for kk in 0..k.min(c) {
            s[kk * c + kk] = value;
        }
        s
    };
    let init = LogitCoefficients::new(c, t.beta0.clone(), own(t.beta_z_own))?;
    let gain = LogitCoefficients::new(c, vec![t.gamma01_intercept; k], own(t.gamma01_slope))?;
    let loss = match t.loss_mode {
        LossMode::Absorbing => None,
        _ => Some(LogitCoefficients::new(c, vec![t.gamma10_intercept; k], own(t.gamma10_slope))?),
    };
    Ok(TrueParameters {
        model: design.fit.measurement_model,
        q: design.true_q(cell)?.clone(),
        items: ItemParameters::GuessSlip(items),
        init,
        trans: TransitionCoefficients::new(gain, loss, t.loss_mode)?,
    })
}

/// Output of [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub responses: ResponsePanel,
    pub covariates: CovariateMatrix,
    pub alpha: AttributeProfilePath,
}

/// Runs the model forward for `n_persons` persons: standard-normal
/// covariates, initial mastery, transitions, then responses.
pub fn generate_dataset<R: Rng + ?Sized>(
    n_persons: usize,
    params: &TrueParameters,
    rng: &mut R,
) -> Result<SimulatedData> {
    let q = &params.q;
    let (j, k, t) = (q.n_items(), q.n_attributes(), q.n_times());
    let c = params.init.n_covariates();
    if params.trans.gain.n_covariates() != c {
        return Err(Error::Shape("initial and transition models differ in covariates".into()));
    }
    let z: Vec<f64> = (0..n_persons * c).map(|_| rng.sample(StandardNormal)).collect();
    let names = (1..=c).map(|cc| format!("z{cc}")).collect();
    let covariates = CovariateMatrix::new(n_persons, names, z)?;
    let mut alpha = AttributeProfilePath::new(n_persons, k, t);
    for i in 0..n_persons {
        let zi = covariates.row(i);
        let mut prev: Pattern = 0;
        for tt in 0..t {
            let mut cur: Pattern = 0;
            for kk in 0..k {
                let p = if tt == 0 {
                    initial_mastery_prob(&params.init, zi, kk)
                } else if bit(prev, kk) == 0 {
                    transition_prob(&params.trans, zi, kk, Direction::Gain)?
                } else if params.trans.loss_mode == LossMode::Absorbing {
                    1.0
                } else {
                    1.0 - transition_prob(&params.trans, zi, kk, Direction::Loss)?
                };
                if rng.random::<f64>() < p {
                    cur |= 1 << kk;
                }
            }
            alpha.set_pattern(i, tt, cur);
            prev = cur;
        }
    }
    let mut responses = ResponsePanel::new(n_persons, j, t);
    for i in 0..n_persons {
        for tt in 0..t {
            let a = alpha.pattern(i, tt);
            for jj in 0..j {
                let p = params.items.success_probability(params.model, q.row(jj, tt), a, jj, tt, j);
                responses.set(i, jj, tt, Some((rng.random::<f64>() < p) as u8));
            }
        }
    }
    Ok(SimulatedData {
        responses,
        covariates,
        alpha,
    })
}

/// Generates replication `replication` of `cell` with its own seed.
pub fn simulate_replication(
    design: &SimulationDesign,
    cell: &DesignCell,
    params: &TrueParameters,
    replication: usize,
) -> Result<(SimulatedData, TruthRecord)> {
    let seed = design.replication_seed(cell, replication);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate_dataset(cell.n_persons, params, &mut rng)?;
    let truth = TruthRecord {
        cell: cell.name(),
        replication,
        seed,
        params: params.clone(),
        alpha: data.alpha.clone(),
    };
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn small_design(text: &str) -> SimulationDesign {
        SimulationDesign::from_toml_str(text, Path::new(".")).unwrap()
    }

    fn params_with(design: &SimulationDesign) -> TrueParameters {
        true_parameters(design, &design.cells()[0]).unwrap()
    }

    #[test]
    fn shapes_match_the_cell() {
        let d = small_design("[grid]\nn_persons = [37]\nn_items = [18]\nsparsity = [\"dense\"]\n");
        let p = params_with(&d);
        let (data, truth) = simulate_replication(&d, &d.cells()[0], &p, 0).unwrap();
        assert_eq!(data.responses.shape(), (37, 18, 3));
        assert_eq!(data.covariates.n_persons(), 37);
        assert_eq!(data.covariates.n_covariates(), 3);
        assert_eq!(truth.alpha.n_persons(), 37);
        let named = truth.named_values();
        assert_eq!(named.len(), 2 * 54 + 3 + 9 + 12 + 12);
        assert!(named.iter().any(|(n, v)| n == "betaZ[2,2]" && *v == 0.5));
        assert!(named.iter().any(|(n, v)| n == "betaZ[2,1]" && *v == 0.0));
        assert!(named.iter().any(|(n, v)| n == "gamma10[3,0]" && *v == -2.0));
    }

    #[test]
    fn noiseless_full_mastery_answers_everything() {
        let d = small_design("[grid]\nn_persons = [10]\nn_items = [6]\nsparsity = [\"sparse\"]\n");
        let mut p = params_with(&d);
        let n = 6 * 3;
        p.items = ItemParameters::GuessSlip(ItemParams::new(6, 3, vec![1e-300; n], vec![1e-300; n], false).unwrap());
        p.init = LogitCoefficients::constant(3, 3, 800.0);
        p.trans.loss = Some(LogitCoefficients::constant(3, 3, -800.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = generate_dataset(10, &p, &mut rng).unwrap();
        for i in 0..10 {
            for t in 0..3 {
                assert_eq!(data.alpha.pattern(i, t), 0b111);
                for j in 0..6 {
                    assert_eq!(data.responses.get(i, j, t), Some(1));
                }
            }
        }
    }

    #[test]
    fn zero_logits_give_half_mastery() {
        let d = small_design("[grid]\nn_persons = [10]\nn_items = [6]\nsparsity = [\"sparse\"]\n");
        let mut p = params_with(&d);
        p.q = QMatrixSet::from_rows(6, 3, 1, p.q.matrix(0).to_vec(), false).unwrap();
        p.init = LogitCoefficients::constant(3, 3, 0.0);
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = generate_dataset(n, &p, &mut rng).unwrap();
        let se = (0.25 / n as f64).sqrt();
        for k in 0..3 {
            let rate = (0..n).map(|i| data.alpha.get(i, k, 0) as f64).sum::<f64>() / n as f64;
            assert!((rate - 0.5).abs() < 3.0 * se, "attribute {k}: {rate}");
        }
    }

    #[test]
    fn empirical_success_given_eta_matches_one_minus_slip() {
        let d = small_design("[grid]\nn_persons = [10]\nn_items = [6]\nsparsity = [\"sparse\"]\n");
        let p = params_with(&d);
        let ItemParameters::GuessSlip(ip) = &p.items else { unreachable!() };
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = generate_dataset(n, &p, &mut rng).unwrap();
        let (j, t) = (0, 0);
        let row = p.q.row(j, t);
        let (mut ones, mut total) = (0.0, 0.0);
        for i in 0..n {
            if data.alpha.pattern(i, t) & row == row {
                total += 1.0;
                ones += data.responses.get(i, j, t).unwrap() as f64;
            }
        }
        let target = 1.0 - ip.slipping(j, t);
        let se = (target * (1.0 - target) / total).sqrt();
        assert!(((ones / total) - target).abs() < 3.0 * se, "{} vs {target}", ones / total);
    }

    #[test]
    fn replications_are_reproducible_and_distinct() {
        let d = small_design("[grid]\nn_persons = [20]\nn_items = [6]\nsparsity = [\"sparse\"]\n");
        let p = params_with(&d);
        let c = &d.cells()[0];
        let a = simulate_replication(&d, c, &p, 1).unwrap().0;
        let b = simulate_replication(&d, c, &p, 1).unwrap().0;
        let other = simulate_replication(&d, c, &p, 2).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a.responses, other.responses);
    }
}
