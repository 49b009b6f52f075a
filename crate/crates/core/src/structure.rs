//! Q-matrix machinery: identifiability checks, initialization, row-pattern
//! enumeration, MAP summaries and GDI/PVAF validation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bit, DatasetDimensions, Pattern, QMode, QMatrixSet, MAX_ATTRIBUTES};
use crate::sampler::PosteriorDraws;

/// PVAF below this value marks a q-vector for revision.
pub const PVAF_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifiabilityViolationKind {
    EmptyItemRow,
    UnderMeasuredAttribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifiabilityViolation {
    pub kind: IdentifiabilityViolationKind,
    /// Item index for empty rows, attribute index otherwise.
    pub index: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub pass: bool,
    pub violations: Vec<IdentifiabilityViolation>,
}

/// Every item must measure an attribute and every attribute must be measured
/// by at least `min_items` items.
pub fn check_identifiability(
    rows: &[Pattern],
    n_attributes: usize,
    min_items: usize,
) -> IdentifiabilityReport {
    let mut violations = Vec::new();
    for (j, &row) in rows.iter().enumerate() {
        if row == 0 {
            violations.push(IdentifiabilityViolation {
                kind: IdentifiabilityViolationKind::EmptyItemRow,
                index: j,
                detail: format!("item {j} measures no attribute"),
            });
        }
    }
    for (k, count) in column_counts(rows, n_attributes).into_iter().enumerate() {
        if count < min_items {
            violations.push(IdentifiabilityViolation {
                kind: IdentifiabilityViolationKind::UnderMeasuredAttribute,
                index: k,
                detail: format!("attribute {k} measured by {count} item(s), need {min_items}"),
            });
        }
    }
    IdentifiabilityReport {
        pass: violations.is_empty(),
        violations,
    }
}

pub fn column_counts(rows: &[Pattern], n_attributes: usize) -> Vec<usize> {
    (0..n_attributes)
        .map(|k| rows.iter().filter(|&&r| bit(r, k) == 1).count())
        .collect()
}

/// Decides which replacement rows keep a Q-matrix identifiable.
///
/// A candidate row is admissible when it is non-zero and, for every
/// attribute, the new column count is at least `min(min_items, current)`.
/// Once a matrix satisfies the conditions this is exactly the identifiability
/// check; before that (e.g. a `[I; I]` start with fewer than `min_items` rows
/// per attribute) counts may only move towards the threshold. The current
/// row is therefore always admissible.
#[derive(Debug, Clone)]
pub struct IdentifiabilityGuard {
    counts: Vec<usize>,
    min_items: usize,
}

impl IdentifiabilityGuard {
    pub fn new(rows: &[Pattern], n_attributes: usize, min_items: usize) -> Self {
        IdentifiabilityGuard {
            counts: column_counts(rows, n_attributes),
            min_items,
        }
    }

    pub fn admits(&self, current: Pattern, candidate: Pattern) -> bool {
        if candidate == 0 {
            return false;
        }
        self.counts.iter().enumerate().all(|(k, &c)| {
            let new = c - bit(current, k) as usize + bit(candidate, k) as usize;
            new >= c.min(self.min_items)
        })
    }

    pub fn replace(&mut self, current: Pattern, candidate: Pattern) {
        for (k, c) in self.counts.iter_mut().enumerate() {
            *c = *c - bit(current, k) as usize + bit(candidate, k) as usize;
        }
    }
}

/// All non-zero K-bit patterns in counting order `1..2^K`.
pub fn enumerate_row_patterns(n_attributes: usize) -> Vec<Pattern> {
    assert!(
        (1..=MAX_ATTRIBUTES).contains(&n_attributes),
        "K must lie in 1..={MAX_ATTRIBUTES}"
    );
    (1..(1u32 << n_attributes)).collect()
}

/// Starting Q-matrices for a chain.
///
/// Free and time-invariant modes put identity blocks in rows `0..K` and
/// `K..2K`, draw the remaining rows from Bernoulli(`theta0`) and repair them
/// until the identifiability conditions hold (as far as the random rows
/// allow). Fixed mode returns `template` with every entry fixed; partial mode
/// honors the template's mask.
pub fn initialize_q<R: Rng + ?Sized>(
    dims: &DatasetDimensions,
    rng: &mut R,
    mode: QMode,
    theta0: f64,
    template: Option<&QMatrixSet>,
    min_items: usize,
) -> Result<QMatrixSet> {
    let (j, k, t) = (dims.n_items, dims.n_attributes, dims.n_times);
    match mode {
        QMode::Free | QMode::TimeInvariant => {
            if j < 2 * k {
                return Err(Error::QMatrix(format!(
                    "free Q estimation needs J >= 2K for two identity blocks (J = {j}, K = {k})"
                )));
            }
            let invariant = mode == QMode::TimeInvariant;
            let n_draw = if invariant { 1 } else { t };
            let mut rows = Vec::with_capacity(j * t);
            for _ in 0..n_draw {
                let mut m: Vec<Pattern> = (0..j)
                    .map(|r| {
                        if r < 2 * k {
                            1 << (r % k)
                        } else {
                            (0..k).fold(0, |acc, b| {
                                if rng.random_bool(theta0) {
                                    acc | (1 << b)
                                } else {
                                    acc
                                }
                            })
                        }
                    })
                    .collect();
                let free_rows: Vec<usize> = (2 * k..j).collect();
                repair(&mut m, k, min_items, &free_rows, &vec![0; j], rng);
                rows.extend(m);
            }
            if invariant {
                let first = rows[..j].to_vec();
                rows = (0..t).flat_map(|_| first.iter().copied()).collect();
            }
            QMatrixSet::from_rows(j, k, t, rows, invariant)
        }
        QMode::Fixed => {
            let q = template.ok_or_else(|| {
                Error::QMatrix("fixed Q mode needs a Q-matrix".into())
            })?;
            check_template_shape(q, dims)?;
            Ok(q.clone().fix_all())
        }
        QMode::Partial => {
            let q = template.ok_or_else(|| {
                Error::QMatrix("partial Q mode needs a Q-matrix and mask".into())
            })?;
            check_template_shape(q, dims)?;
            let mut out = q.clone();
            for tt in 0..q.n_distinct_times() {
                let mut m: Vec<Pattern> = q.matrix(tt).to_vec();
                let masks: Vec<Pattern> = (0..j).map(|r| q.fixed_mask(r, tt)).collect();
                for (r, row) in m.iter_mut().enumerate() {
                    let free = !masks[r] & ((1 << k) - 1);
                    let proposal = if r < 2 * k {
                        1 << (r % k)
                    } else {
                        (0..k).fold(0, |acc, b| {
                            if rng.random_bool(theta0) {
                                acc | (1 << b)
                            } else {
                                acc
                            }
                        })
                    };
                    *row = (*row & !free) | (proposal & free);
                }
                let candidates: Vec<usize> = (2 * k..j).chain(0..(2 * k).min(j)).collect();
                repair(&mut m, k, min_items, &candidates, &masks, rng);
                let report = check_identifiability(&m, k, min_items);
                if !report.pass {
                    let details: Vec<String> =
                        report.violations.iter().map(|v| v.detail.clone()).collect();
                    return Err(Error::QMatrix(format!(
                        "fixed entries cannot be completed to an identifiable Q-matrix at time {tt}: {}",
                        details.join("; ")
                    )));
                }
                for (r, &row) in m.iter().enumerate() {
                    out.set_row(r, tt, row);
                }
            }
            Ok(out)
        }
    }
}

fn check_template_shape(q: &QMatrixSet, dims: &DatasetDimensions) -> Result<()> {
    if q.n_items() != dims.n_items || q.n_attributes() != dims.n_attributes || q.n_times() != dims.n_times {
        return Err(Error::Shape(format!(
            "Q-matrix is {}x{}x{}, data need {}x{}x{}",
            q.n_items(),
            q.n_attributes(),
            q.n_times(),
            dims.n_items,
            dims.n_attributes,
            dims.n_times
        )));
    }
    Ok(())
}

/// Greedy repair: gives empty rows a random free attribute, then switches on
/// free entries of under-measured attributes in `candidates` order.
fn repair<R: Rng + ?Sized>(
    rows: &mut [Pattern],
    k: usize,
    min_items: usize,
    candidates: &[usize],
    fixed_masks: &[Pattern],
    rng: &mut R,
) {
    let full: Pattern = (1 << k) - 1;
    for &r in candidates {
        if rows[r] == 0 {
            let free: Vec<usize> = (0..k).filter(|&b| bit(fixed_masks[r], b) == 0).collect();
            if !free.is_empty() {
                rows[r] |= 1 << free[rng.random_range(0..free.len())];
            }
        }
    }
    for attr in 0..k {
        let mut count = rows.iter().filter(|&&r| bit(r, attr) == 1).count();
        for &r in candidates {
            if count >= min_items {
                break;
            }
            if bit(rows[r], attr) == 0 && bit(fixed_masks[r], attr) == 0 && rows[r] != full {
                rows[r] |= 1 << attr;
                count += 1;
            }
        }
    }
}

/// Row-wise MAP Q-matrix with posterior summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMapEstimate {
    pub q: QMatrixSet,
    /// Per `time * J + item`: (pattern, posterior frequency), counting order.
    pub row_frequencies: Vec<Vec<(Pattern, f64)>>,
    /// Entry-wise posterior inclusion, indexed `(time * J + item) * K + k`.
    pub entry_means: Vec<f64>,
}

/// Picks the most frequent pattern; ties go to the pattern with fewer ones,
/// then to the lower counting order.
pub fn map_row(counts: &BTreeMap<Pattern, u64>) -> Option<Pattern> {
    counts
        .iter()
        .max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb)
                .then(pb.count_ones().cmp(&pa.count_ones()))
                .then(pb.cmp(pa))
        })
        .map(|(&p, _)| p)
}

pub fn map_q_estimate(draws: &PosteriorDraws) -> Result<QMapEstimate> {
    let total = draws.n_draws();
    if total == 0 {
        return Err(Error::EmptyDraws);
    }
    let template = draws.q_template();
    let (j, k, t) = (template.n_items(), template.n_attributes(), template.n_times());
    let mut counts: Vec<BTreeMap<Pattern, u64>> = vec![BTreeMap::new(); j * t];
    if draws.q_sampled() {
        for chain in draws.chains() {
            for rows in &chain.q_rows {
                for (idx, &p) in rows.iter().enumerate() {
                    *counts[idx].entry(p).or_insert(0) += 1;
                }
            }
        }
    } else {
        for (idx, &p) in template.rows().iter().enumerate() {
            counts[idx].insert(p, total as u64);
        }
    }
    let mut q = template.clone();
    let mut row_frequencies = Vec::with_capacity(j * t);
    let mut entry_means = vec![0.0; j * t * k];
    for tt in 0..t {
        for jj in 0..j {
            let idx = tt * j + jj;
            let c = &counts[idx];
            let best = map_row(c).ok_or(Error::EmptyDraws)?;
            if !template.time_invariant() || tt == 0 {
                q.set_row(jj, tt, best);
            }
            row_frequencies.push(
                c.iter()
                    .map(|(&p, &n)| (p, n as f64 / total as f64))
                    .collect(),
            );
            for (&p, &n) in c {
                for kk in 0..k {
                    if bit(p, kk) == 1 {
                        entry_means[idx * k + kk] += n as f64 / total as f64;
                    }
                }
            }
        }
    }
    Ok(QMapEstimate {
        q,
        row_frequencies,
        entry_means,
    })
}

/// Nonnegative weights over attribute patterns that sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePatternDistribution {
    weights: Vec<f64>,
}

impl AttributePatternDistribution {
    /// Accepts weights that already sum to 1 within 1e-12.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::ParameterRange(
                "pattern weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Unnormalized(sum));
        }
        Ok(AttributePatternDistribution { weights })
    }

    /// Rescales arbitrary nonnegative weights to sum to one.
    pub fn normalized(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Unnormalized(sum));
        }
        Ok(AttributePatternDistribution {
            weights: weights.iter().map(|w| w / sum).collect(),
        })
    }

    pub fn uniform(n_attributes: usize) -> Self {
        let n = 1usize << n_attributes;
        AttributePatternDistribution {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// GDI: weighted variance of success probabilities across patterns.
pub fn gdi(success_probs: &[f64], dist: &AttributePatternDistribution) -> Result<f64> {
    if success_probs.len() != dist.weights.len() {
        return Err(Error::Shape(format!(
            "{} success probabilities for {} pattern weights",
            success_probs.len(),
            dist.weights.len()
        )));
    }
    let mean: f64 = dist
        .weights
        .iter()
        .zip(success_probs)
        .map(|(w, p)| w * p)
        .sum();
    Ok(dist
        .weights
        .iter()
        .zip(success_probs)
        .map(|(w, p)| w * (p - mean).powi(2))
        .sum())
}

/// Collapses a full `2^K` success table and pattern distribution onto the
/// reduced patterns of `candidate`: group weights are marginal masses and
/// group success probabilities the weighted averages within each group.
pub fn reduce_to_candidate(
    candidate: Pattern,
    full_success: &[f64],
    full_dist: &AttributePatternDistribution,
) -> Result<(Vec<f64>, AttributePatternDistribution)> {
    if full_success.len() != full_dist.weights.len() {
        return Err(Error::Shape(
            "success table and pattern distribution differ in length".into(),
        ));
    }
    let groups = 1usize << candidate.count_ones();
    let mut mass = vec![0.0; groups];
    let mut weighted = vec![0.0; groups];
    for (alpha, (&w, &p)) in full_dist.weights.iter().zip(full_success).enumerate() {
        let l = crate::model::reduce_pattern(alpha as Pattern, candidate) as usize;
        mass[l] += w;
        weighted[l] += w * p;
    }
    let probs = mass
        .iter()
        .zip(&weighted)
        .map(|(&m, &s)| if m > 0.0 { s / m } else { 0.0 })
        .collect();
    Ok((probs, AttributePatternDistribution { weights: mass }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pvaf {
    pub value: f64,
    pub gdi: f64,
    /// The full q-vector explains no variance; `value` is reported as 0.
    pub degenerate: bool,
}

/// GDI of `candidate` relative to the GDI of the all-attributes vector.
pub fn pvaf(
    candidate: Pattern,
    full_success: &[f64],
    full_dist: &AttributePatternDistribution,
) -> Result<Pvaf> {
    let n_attributes = full_dist.weights.len().trailing_zeros();
    let full: Pattern = (1 << n_attributes) - 1;
    let (probs, dist) = reduce_to_candidate(candidate, full_success, full_dist)?;
    let cand_gdi = gdi(&probs, &dist)?;
    let (full_probs, full_d) = reduce_to_candidate(full, full_success, full_dist)?;
    let max_gdi = gdi(&full_probs, &full_d)?;
    // a variance this small is rounding noise around a flat item
    if max_gdi <= 1e-15 {
        return Ok(Pvaf {
            value: 0.0,
            gdi: cand_gdi,
            degenerate: true,
        });
    }
    Ok(Pvaf {
        value: (cand_gdi / max_gdi).clamp(0.0, 1.0),
        gdi: cand_gdi,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QValidationEntry {
    pub item: usize,
    pub time: usize,
    pub current: Pattern,
    /// (candidate, gdi, pvaf) for every non-zero candidate in counting order.
    pub candidates: Vec<(Pattern, f64, f64)>,
    pub current_pvaf: f64,
    pub pvaf_below_threshold: bool,
    /// Sparsest candidate reaching the threshold; `None` if no candidate does.
    pub suggested: Option<Pattern>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QValidationReport {
    pub threshold: f64,
    pub entries: Vec<QValidationEntry>,
}

/// Runs PVAF validation for every (item, time).
///
/// `success[time * J + item]` holds the item's `2^K` success probabilities
/// and `dists[time]` the attribute pattern distribution at that time.
pub fn validate_q(
    q: &QMatrixSet,
    success: &[Vec<f64>],
    dists: &[AttributePatternDistribution],
    threshold: f64,
) -> Result<QValidationReport> {
    let (j, k, t) = (q.n_items(), q.n_attributes(), q.n_times());
    if success.len() != j * t || dists.len() != t {
        return Err(Error::Shape(
            "validation inputs do not match the Q-matrix".into(),
        ));
    }
    let patterns = enumerate_row_patterns(k);
    let mut entries = Vec::with_capacity(j * t);
    for tt in 0..t {
        for jj in 0..j {
            let table = &success[tt * j + jj];
            let mut candidates = Vec::with_capacity(patterns.len());
            let mut degenerate = false;
            for &c in &patterns {
                let r = pvaf(c, table, &dists[tt])?;
                degenerate |= r.degenerate;
                candidates.push((c, r.gdi, r.value));
            }
            let current = q.row(jj, tt);
            let current_pvaf = candidates
                .iter()
                .find(|(c, _, _)| *c == current)
                .map(|x| x.2)
                .unwrap_or(0.0);
            let suggested = candidates
                .iter()
                .filter(|(_, _, v)| *v >= threshold)
                .min_by(|a, b| {
                    a.0.count_ones()
                        .cmp(&b.0.count_ones())
                        .then(b.2.total_cmp(&a.2))
                        .then(a.0.cmp(&b.0))
                })
                .map(|x| x.0);
            entries.push(QValidationEntry {
                item: jj,
                time: tt,
                current,
                candidates,
                current_pvaf,
                pvaf_below_threshold: current_pvaf < threshold,
                suggested,
                degenerate,
            });
        }
    }
    Ok(QValidationReport { threshold, entries })
}
