//! Gibbs full conditionals against brute-force enumeration and quadrature.

mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, Continuous};

use dinatrace_core::measurement::{build_pattern_cache, Gate};
use dinatrace_core::model::{LossMode, MaskEntry, MeasurementModel, Pattern, QMatrixSet, SparsityState};
use dinatrace_core::sampler::{
    alpha_step_conditional, q_row_conditional, sample_alpha_path, theta_posterior_shapes, EtaCounts, ResponseTally,
};
use dinatrace_core::structure::IdentifiabilityGuard;

#[test]
fn alpha_step_matches_enumeration() {
    for (seed, mode) in [(1, LossMode::Free), (2, LossMode::SoftMonotone), (3, LossMode::Absorbing)] {
        let toy = toy(seed, 20, 4, 2, 3, 2, mode, 0.1);
        let st = &toy.state;
        let cache = build_pattern_cache(&st.q, &st.items, MeasurementModel::Dina).unwrap();
        let mut sup = 0.0f64;
        for i in 0..20 {
            let path = st.alpha.person(i);
            for t in 0..3 {
                let got = alpha_step_conditional(&toy.dataset, &cache, &st.init, &st.trans, i, t, path);
                let want = oracle_step(&toy, i, t, path);
                for (a, b) in got.iter().zip(&want) {
                    sup = sup.max((a - b).abs());
                }
            }
        }
        assert!(sup < 1e-10, "{mode:?}: sup difference {sup:e}");
    }
}

#[test]
fn alpha_sweep_marginals_match_exact_kernel() {
    let toy = toy(11, 20, 4, 2, 3, 1, LossMode::Free, 0.0);
    let st = &toy.state;
    let cache = build_pattern_cache(&st.q, &st.items, MeasurementModel::Dina).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for person in [0, 7, 13] {
        let start = st.alpha.person(person).to_vec();
        // probability of each output path of one sweep from `start`
        let mut marginal = [[0.0; 4]; 3];
        for code in 0..64u32 {
            let out: Vec<Pattern> = (0..3).map(|t| code >> (2 * t) & 3).collect();
            let mut prob = 1.0;
            let mut cur = start.clone();
            for t in 0..3 {
                prob *= oracle_step(&toy, person, t, &cur)[out[t] as usize];
                cur[t] = out[t];
            }
            for t in 0..3 {
                marginal[t][out[t] as usize] += prob;
            }
        }
        let mut counts = [[0u64; 4]; 3];
        for _ in 0..100_000 {
            let mut path = start.clone();
            sample_alpha_path(&mut rng, &toy.dataset, &cache, &st.init, &st.trans, person, &mut path);
            for t in 0..3 {
                counts[t][path[t] as usize] += 1;
            }
        }
        for t in 0..3 {
            let tv = total_variation(&counts[t], &marginal[t]);
            assert!(tv < 0.01, "person {person} time {t}: TV {tv}");
        }
    }
}

#[test]
fn guess_slip_conditionals_match_grid() {
    let toy = toy(21, 60, 5, 3, 2, 1, LossMode::SoftMonotone, 0.1);
    let tally = ResponseTally::new(&toy.dataset, &toy.state.alpha);
    let h = 1.0 / 100_000.0;
    let grid: Vec<f64> = (0..100_000).map(|i| (i as f64 + 0.5) * h).collect();
    let mut sup = 0.0f64;
    for t in 0..2 {
        for j in 0..5 {
            let row = toy.state.q.row(j, t);
            let n = raw_eta_counts(&toy, row, j, t);
            let e = EtaCounts::from_tally(tally.item(j, t), row, Gate::And);
            assert_eq!(e.n, n);
            let ((ga, gb), (sa, sb)) = e.posterior_shapes();
            // g: eta = 0 responses; s: eta = 1 responses, flat priors
            for (shape, log_kernel) in [
                ((ga, gb), Box::new(|x: f64| n[0][1] as f64 * x.ln() + n[0][0] as f64 * (1.0 - x).ln()) as Box<dyn Fn(f64) -> f64>),
                ((sa, sb), Box::new(|x: f64| n[1][0] as f64 * x.ln() + n[1][1] as f64 * (1.0 - x).ln())),
            ] {
                let logs: Vec<f64> = grid.iter().map(|&x| log_kernel(x)).collect();
                let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logs.iter().map(|l| (l - m).exp()).sum::<f64>() * h;
                let beta = Beta::new(shape.0, shape.1).unwrap();
                for (x, l) in grid.iter().zip(&logs).step_by(97) {
                    sup = sup.max(((l - m).exp() / z - beta.pdf(*x)).abs());
                }
            }
        }
    }
    assert!(sup < 1e-6, "sup difference {sup:e}");
}

#[test]
fn theta_shapes_count_free_entries() {
    let rows = vec![0b011, 0b001, 0b111, 0b100, 0b010, 0b110];
    let q = QMatrixSet::from_rows(6, 3, 1, rows.clone(), false).unwrap();
    let s = SparsityState::new(0.3, 2.0, 5.0).unwrap();
    let ones: u32 = rows.iter().map(|r| r.count_ones()).sum();
    assert_eq!(theta_posterior_shapes(&q, &s), (2.0 + ones as f64, 5.0 + (18 - ones) as f64));
    // fixing the first row removes its three entries from both counts
    let mut mask = vec![vec![MaskEntry::Free; 3]; 6];
    mask[0] = vec![MaskEntry::Fixed1, MaskEntry::Fixed1, MaskEntry::Fixed0];
    let qm = q.clone().with_mask(&mask).unwrap();
    assert_eq!(theta_posterior_shapes(&qm, &s), (2.0 + (ones - 2) as f64, 5.0 + (15 - (ones - 2)) as f64));
    assert_eq!(theta_posterior_shapes(&q.fix_all(), &s), (2.0, 5.0));
}

/// Column counts of Q at one time.
fn column_counts(q: &QMatrixSet, time: usize) -> Vec<usize> {
    (0..q.n_attributes())
        .map(|k| (0..q.n_items()).filter(|&j| q.get(j, k, time) == 1).count())
        .collect()
}

/// log of the integral of x^a (1 - x)^b over (0, 1) by the midpoint rule.
fn log_beta_quadrature(a: f64, b: f64) -> f64 {
    let m = 200_000;
    let h = 1.0 / m as f64;
    let logs: Vec<f64> = (0..m)
        .map(|i| {
            let x = (i as f64 + 0.5) * h;
            a * x.ln() + b * (1.0 - x).ln()
        })
        .collect();
    let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + (logs.iter().map(|l| (l - mx).exp()).sum::<f64>() * h).ln()
}

fn oracle_q_row(toy: &Toy, theta: f64, min_items: usize, collapsed: bool, item: usize, time: usize) -> Vec<(Pattern, f64)> {
    let q = &toy.state.q;
    let k = q.n_attributes();
    let counts = column_counts(q, time);
    let current = q.row(item, time);
    let p = guess_slip(&toy.state);
    let (g, s) = (p.guessing(item, time), p.slipping(item, time));
    let mut cands = Vec::new();
    let mut logw = Vec::new();
    for c in 1..(1u32 << k) {
        let admissible = (0..k).all(|kk| {
            let new = counts[kk] - (current >> kk & 1) as usize + (c >> kk & 1) as usize;
            new >= counts[kk].min(min_items)
        });
        if !admissible {
            continue;
        }
        let ones = c.count_ones() as f64;
        let mut lw = ones * theta.ln() + (k as f64 - ones) * (1.0 - theta).ln();
        let n = raw_eta_counts(toy, c, item, time);
        if collapsed {
            lw += log_beta_quadrature(n[0][1] as f64, n[0][0] as f64) + log_beta_quadrature(n[1][0] as f64, n[1][1] as f64);
        } else {
            for i in 0..toy.dims.n_persons {
                if let Some(y) = toy.panel.get(i, item, time) {
                    let pc = p_correct(toy.state.alpha.pattern(i, time), c, g, s);
                    lw += if y == 1 { pc.ln() } else { (1.0 - pc).ln() };
                }
            }
        }
        cands.push(c);
        logw.push(lw);
    }
    cands.into_iter().zip(normalize(&logw)).collect()
}

#[test]
fn q_row_conditional_matches_enumeration() {
    let toy = toy(31, 40, 8, 3, 2, 1, LossMode::SoftMonotone, 0.05);
    let st = &toy.state;
    let tally = ResponseTally::new(&toy.dataset, &st.alpha);
    for (collapsed, tol) in [(false, 1e-10), (true, 1e-8)] {
        for min_items in [1, 3] {
            for t in 0..2 {
                let guard = IdentifiabilityGuard::new(st.q.matrix(t), 3, min_items);
                for j in 0..8 {
                    let got = q_row_conditional(&st.q, &st.items, &tally, MeasurementModel::Dina, collapsed, 0.35, &guard, j, t);
                    let want = oracle_q_row(&toy, 0.35, min_items, collapsed, j, t);
                    assert_eq!(
                        got.iter().map(|x| x.0).collect::<Vec<_>>(),
                        want.iter().map(|x| x.0).collect::<Vec<_>>()
                    );
                    for (a, b) in got.iter().zip(&want) {
                        assert!((a.1 - b.1).abs() < tol, "collapsed={collapsed} item {j} time {t}: {} vs {}", a.1, b.1);
                    }
                }
            }
        }
    }
}

#[test]
fn time_invariant_row_pools_all_times() {
    let toy = toy(41, 40, 6, 2, 3, 1, LossMode::Free, 0.0);
    let shared: Vec<Pattern> = (0..3).flat_map(|_| toy.state.q.matrix(0).to_vec()).collect();
    let q = QMatrixSet::from_rows(6, 2, 3, shared, true).unwrap();
    let tally = ResponseTally::new(&toy.dataset, &toy.state.alpha);
    let guard = IdentifiabilityGuard::new(q.matrix(0), 2, 1);
    let p = guess_slip(&toy.state);
    for j in 0..6 {
        let got = q_row_conditional(&q, &toy.state.items, &tally, MeasurementModel::Dina, false, 0.5, &guard, j, 0);
        let logw: Vec<f64> = got
            .iter()
            .map(|&(c, _)| {
                let mut lw = 0.0;
                for t in 0..3 {
                    for i in 0..40 {
                        let y = toy.panel.get(i, j, t).unwrap();
                        let pc = p_correct(toy.state.alpha.pattern(i, t), c, p.guessing(j, t), p.slipping(j, t));
                        lw += if y == 1 { pc.ln() } else { (1.0 - pc).ln() };
                    }
                }
                lw
            })
            .collect();
        for ((_, a), b) in got.iter().zip(normalize(&logw)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn current_row_is_always_a_candidate(seed in 0u64..1000, min_items in 1usize..5, collapsed: bool) {
        let toy = toy(seed, 10, 6, 3, 1, 1, LossMode::Free, 0.0);
        let tally = ResponseTally::new(&toy.dataset, &toy.state.alpha);
        let guard = IdentifiabilityGuard::new(toy.state.q.matrix(0), 3, min_items);
        for j in 0..6 {
            let cond = q_row_conditional(&toy.state.q, &toy.state.items, &tally, MeasurementModel::Dina, collapsed, 0.5, &guard, j, 0);
            prop_assert!(cond.iter().any(|&(c, _)| c == toy.state.q.row(j, 0)));
            let total: f64 = cond.iter().map(|x| x.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
