//! Domain types shared by every part of the engine.
//!
//! Attribute vectors and Q-matrix rows are stored as bit patterns: attribute
//! `k` (zero-based) is mastered / required iff bit `k` of the [`Pattern`] is
//! set. Pattern `0b011` therefore is the vector `(1, 1, 0)` for `K = 3`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary attribute vector packed into an integer, attribute `k` at bit `k`.
pub type Pattern = u32;

/// Largest supported number of attributes; `2^K` patterns are enumerated
/// exhaustively.
pub const MAX_ATTRIBUTES: usize = 16;

/// Sentinel for an unobserved response cell.
pub(crate) const MISSING: u8 = u8::MAX;

#[inline]
pub fn bit(pattern: Pattern, k: usize) -> u8 {
    ((pattern >> k) & 1) as u8
}

/// Packs a 0/1 slice (attribute 1 first) into a [`Pattern`].
pub fn pattern_from_bits(bits: &[u8]) -> Pattern {
    bits.iter()
        .enumerate()
        .fold(0, |acc, (k, &b)| if b != 0 { acc | (1 << k) } else { acc })
}

pub fn pattern_to_bits(pattern: Pattern, n_attributes: usize) -> Vec<u8> {
    (0..n_attributes).map(|k| bit(pattern, k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDimensions {
    pub n_persons: usize,
    pub n_items: usize,
    pub n_attributes: usize,
    pub n_times: usize,
    pub n_covariates: usize,
}

impl DatasetDimensions {
    pub fn new(
        n_persons: usize,
        n_items: usize,
        n_attributes: usize,
        n_times: usize,
        n_covariates: usize,
    ) -> Result<Self> {
        let dims = DatasetDimensions {
            n_persons,
            n_items,
            n_attributes,
            n_times,
            n_covariates,
        };
        dims.check()?;
        Ok(dims)
    }

    pub fn check(&self) -> Result<()> {
        let counts = [
            ("n_persons", self.n_persons),
            ("n_items", self.n_items),
            ("n_attributes", self.n_attributes),
            ("n_times", self.n_times),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Dimensions(format!("{name} must be at least 1")));
            }
        }
        if self.n_attributes > MAX_ATTRIBUTES {
            return Err(Error::Dimensions(format!(
                "n_attributes = {} exceeds the supported maximum of {MAX_ATTRIBUTES}",
                self.n_attributes
            )));
        }
        Ok(())
    }

    pub fn n_patterns(&self) -> usize {
        1 << self.n_attributes
    }
}

/// Binary responses over (person, item, time); `None` marks a missing cell.
///
/// Values are held unchecked until [`validate_dataset`] turns the panel into a
/// [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsePanel {
    n_persons: usize,
    n_items: usize,
    n_times: usize,
    values: Vec<Option<u8>>,
}

impl ResponsePanel {
    pub fn new(n_persons: usize, n_items: usize, n_times: usize) -> Self {
        ResponsePanel {
            n_persons,
            n_items,
            n_times,
            values: vec![None; n_persons * n_items * n_times],
        }
    }

    /// `values` are laid out person-major, then time, then item.
    pub fn from_values(
        n_persons: usize,
        n_items: usize,
        n_times: usize,
        values: Vec<Option<u8>>,
    ) -> Result<Self> {
        let expected = n_persons * n_items * n_times;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "response panel has {} cells, expected {expected}",
                values.len()
            )));
        }
        Ok(ResponsePanel {
            n_persons,
            n_items,
            n_times,
            values,
        })
    }

    #[inline]
    fn index(&self, person: usize, item: usize, time: usize) -> usize {
        (person * self.n_times + time) * self.n_items + item
    }

    pub fn get(&self, person: usize, item: usize, time: usize) -> Option<u8> {
        self.values[self.index(person, item, time)]
    }

    pub fn set(&mut self, person: usize, item: usize, time: usize, value: Option<u8>) {
        let idx = self.index(person, item, time);
        self.values[idx] = value;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_persons, self.n_items, self.n_times)
    }
}

/// Person-by-covariate design matrix (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMatrix {
    n_persons: usize,
    names: Vec<String>,
    values: Vec<f64>,
    standardized: Vec<bool>,
}

impl CovariateMatrix {
    pub fn new(n_persons: usize, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_persons * names.len() {
            return Err(Error::Shape(format!(
                "covariate matrix has {} values, expected {} x {}",
                values.len(),
                n_persons,
                names.len()
            )));
        }
        let standardized = vec![false; names.len()];
        Ok(CovariateMatrix {
            n_persons,
            names,
            values,
            standardized,
        })
    }

    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    pub fn n_covariates(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn standardized_flags(&self) -> &[bool] {
        &self.standardized
    }

    pub fn get(&self, person: usize, covariate: usize) -> f64 {
        self.values[person * self.names.len() + covariate]
    }

    pub fn row(&self, person: usize) -> &[f64] {
        let c = self.names.len();
        &self.values[person * c..(person + 1) * c]
    }

    pub fn column(&self, covariate: usize) -> Vec<f64> {
        (0..self.n_persons).map(|i| self.get(i, covariate)).collect()
    }
}

/// Rescales the selected columns to sample mean 0 and sample SD 1 (n - 1
/// denominator). Other columns are left untouched.
pub fn standardize_covariates(
    covariates: &CovariateMatrix,
    which: &[usize],
) -> Result<CovariateMatrix> {
    let mut out = covariates.clone();
    let n = covariates.n_persons;
    let c = covariates.n_covariates();
    for &col in which {
        if col >= c {
            return Err(Error::Shape(format!(
                "covariate column {col} out of range (have {c})"
            )));
        }
        if n < 2 {
            return Err(Error::ZeroVariance { column: col });
        }
        let column = covariates.column(col);
        let mean = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::ZeroVariance { column: col });
        }
        for i in 0..n {
            out.values[i * c + col] = (column[i] - mean) / sd;
        }
        out.standardized[col] = true;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    ShapeMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    NonBinaryResponse {
        person: usize,
        item: usize,
        time: usize,
        value: u8,
    },
    EmptySlice {
        person: usize,
        time: usize,
    },
    NonFiniteCovariate {
        column: usize,
        name: String,
        person: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShapeMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected {expected}, found {found}"),
            Violation::NonBinaryResponse {
                person,
                item,
                time,
                value,
            } => write!(
                f,
                "non-binary response {value} at cell ({person},{item},{time})"
            ),
            Violation::EmptySlice { person, time } => {
                write!(f, "person {person} has no observed response at time {time}")
            }
            Violation::NonFiniteCovariate {
                column,
                name,
                person,
            } => write!(
                f,
                "covariate column {column} ('{name}') is not finite (first at person {person})"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// A response panel and covariate matrix that passed [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dims: DatasetDimensions,
    responses: Vec<u8>,
    covariates: CovariateMatrix,
}

impl Dataset {
    pub fn dims(&self) -> &DatasetDimensions {
        &self.dims
    }

    pub fn covariates(&self) -> &CovariateMatrix {
        &self.covariates
    }

    #[inline]
    pub fn response(&self, person: usize, item: usize, time: usize) -> Option<u8> {
        let v = self.responses[self.index(person, item, time)];
        (v != MISSING).then_some(v)
    }

    /// Responses of one person at one time point, one byte per item
    /// (`0`, `1`, or the missing sentinel).
    #[inline]
    pub(crate) fn slice(&self, person: usize, time: usize) -> &[u8] {
        let j = self.dims.n_items;
        let start = (person * self.dims.n_times + time) * j;
        &self.responses[start..start + j]
    }

    #[inline]
    fn index(&self, person: usize, item: usize, time: usize) -> usize {
        (person * self.dims.n_times + time) * self.dims.n_items + item
    }

    pub fn to_panel(&self) -> ResponsePanel {
        let values = self
            .responses
            .iter()
            .map(|&v| (v != MISSING).then_some(v))
            .collect();
        ResponsePanel {
            n_persons: self.dims.n_persons,
            n_items: self.dims.n_items,
            n_times: self.dims.n_times,
            values,
        }
    }

    pub fn n_observed(&self) -> usize {
        self.responses.iter().filter(|&&v| v != MISSING).count()
    }
}

/// Checks every shape and domain invariant and returns a [`Dataset`] handle,
/// or an error listing all violations with their coordinates.
pub fn validate_dataset(
    panel: &ResponsePanel,
    covariates: &CovariateMatrix,
    dims: &DatasetDimensions,
) -> Result<Dataset> {
    dims.check()?;
    let mut report = ValidationReport::default();
    let shape_checks = [
        ("panel persons", dims.n_persons, panel.n_persons),
        ("panel items", dims.n_items, panel.n_items),
        ("panel time points", dims.n_times, panel.n_times),
        ("covariate rows", dims.n_persons, covariates.n_persons),
        ("covariate columns", dims.n_covariates, covariates.n_covariates()),
    ];
    for (what, expected, found) in shape_checks {
        if expected != found {
            report.violations.push(Violation::ShapeMismatch {
                what: what.to_string(),
                expected,
                found,
            });
        }
    }
    if !report.violations.is_empty() {
        return Err(Error::Validation(report));
    }

    let mut responses = Vec::with_capacity(panel.values.len());
    for i in 0..dims.n_persons {
        for t in 0..dims.n_times {
            let mut observed = 0usize;
            for j in 0..dims.n_items {
                match panel.get(i, j, t) {
                    None => responses.push(MISSING),
                    Some(v @ (0 | 1)) => {
                        observed += 1;
                        responses.push(v);
                    }
                    Some(value) => {
                        report.violations.push(Violation::NonBinaryResponse {
                            person: i,
                            item: j,
                            time: t,
                            value,
                        });
                        responses.push(MISSING);
                        observed += 1;
                    }
                }
            }
            if observed == 0 {
                report
                    .violations
                    .push(Violation::EmptySlice { person: i, time: t });
            }
        }
    }
    for c in 0..covariates.n_covariates() {
        if let Some(person) = (0..dims.n_persons).find(|&i| !covariates.get(i, c).is_finite()) {
            report.violations.push(Violation::NonFiniteCovariate {
                column: c,
                name: covariates.names[c].clone(),
                person,
            });
        }
    }
    if !report.violations.is_empty() {
        return Err(Error::Validation(report));
    }
    Ok(Dataset {
        dims: *dims,
        responses,
        covariates: covariates.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskEntry {
    Fixed0,
    Fixed1,
    Free,
}

/// Per-time-point J x K binary Q-matrices with a fixed/free mask.
///
/// Rows are stored as patterns indexed by `time * J + item`. In
/// time-invariant mode all time points hold identical rows and every write
/// goes to all of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QMatrixSet {
    n_items: usize,
    n_attributes: usize,
    n_times: usize,
    time_invariant: bool,
    rows: Vec<Pattern>,
    fixed_mask: Vec<Pattern>,
    fixed_values: Vec<Pattern>,
}

impl QMatrixSet {
    /// All-free Q-matrix set built from `rows[time * J + item]`.
    pub fn from_rows(
        n_items: usize,
        n_attributes: usize,
        n_times: usize,
        rows: Vec<Pattern>,
        time_invariant: bool,
    ) -> Result<Self> {
        if rows.len() != n_items * n_times {
            return Err(Error::Shape(format!(
                "Q-matrix set has {} rows, expected {}",
                rows.len(),
                n_items * n_times
            )));
        }
        if n_attributes == 0 || n_attributes > MAX_ATTRIBUTES {
            return Err(Error::Dimensions(format!(
                "n_attributes = {n_attributes} outside 1..={MAX_ATTRIBUTES}"
            )));
        }
        let full: Pattern = (1 << n_attributes) - 1;
        if let Some(r) = rows.iter().find(|&&r| r & !full != 0) {
            return Err(Error::QMatrix(format!(
                "row pattern {r} uses attributes beyond K = {n_attributes}"
            )));
        }
        if time_invariant {
            for t in 1..n_times {
                if rows[t * n_items..(t + 1) * n_items] != rows[..n_items] {
                    return Err(Error::QMatrix(format!(
                        "time-invariant Q-matrix differs at time index {t}"
                    )));
                }
            }
        }
        let n = rows.len();
        Ok(QMatrixSet {
            n_items,
            n_attributes,
            n_times,
            time_invariant,
            rows,
            fixed_mask: vec![0; n],
            fixed_values: vec![0; n],
        })
    }

    /// Marks entries fixed according to `mask[time * J + item][k]`; fixed
    /// entries take the value encoded in the mask.
    pub fn with_mask(mut self, mask: &[Vec<MaskEntry>]) -> Result<Self> {
        if mask.len() != self.rows.len() {
            return Err(Error::Shape(format!(
                "mask has {} rows, expected {}",
                mask.len(),
                self.rows.len()
            )));
        }
        for (idx, row) in mask.iter().enumerate() {
            if row.len() != self.n_attributes {
                return Err(Error::Shape(format!(
                    "mask row {idx} has {} entries, expected {}",
                    row.len(),
                    self.n_attributes
                )));
            }
            let mut m = 0;
            let mut v = 0;
            for (k, entry) in row.iter().enumerate() {
                match entry {
                    MaskEntry::Fixed0 => m |= 1 << k,
                    MaskEntry::Fixed1 => {
                        m |= 1 << k;
                        v |= 1 << k;
                    }
                    MaskEntry::Free => {}
                }
            }
            self.fixed_mask[idx] = m;
            self.fixed_values[idx] = v;
            self.rows[idx] = (self.rows[idx] & !m) | v;
        }
        if self.time_invariant {
            let j = self.n_items;
            for t in 1..self.n_times {
                if self.fixed_mask[t * j..(t + 1) * j] != self.fixed_mask[..j]
                    || self.fixed_values[t * j..(t + 1) * j] != self.fixed_values[..j]
                {
                    return Err(Error::QMatrix(
                        "time-invariant mask differs across time points".into(),
                    ));
                }
            }
        }
        Ok(self)
    }

    /// Marks every entry as fixed at its current value.
    pub fn fix_all(mut self) -> Self {
        let full: Pattern = (1 << self.n_attributes) - 1;
        self.fixed_mask.iter_mut().for_each(|m| *m = full);
        self.fixed_values.clone_from(&self.rows);
        self
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn time_invariant(&self) -> bool {
        self.time_invariant
    }

    #[inline]
    pub fn row(&self, item: usize, time: usize) -> Pattern {
        self.rows[time * self.n_items + item]
    }

    pub fn get(&self, item: usize, attribute: usize, time: usize) -> u8 {
        bit(self.row(item, time), attribute)
    }

    /// The J rows at one time point.
    pub fn matrix(&self, time: usize) -> &[Pattern] {
        &self.rows[time * self.n_items..(time + 1) * self.n_items]
    }

    pub fn rows(&self) -> &[Pattern] {
        &self.rows
    }

    pub fn fixed_mask(&self, item: usize, time: usize) -> Pattern {
        self.fixed_mask[time * self.n_items + item]
    }

    pub fn fixed_values(&self, item: usize, time: usize) -> Pattern {
        self.fixed_values[time * self.n_items + item]
    }

    pub fn mask_entry(&self, item: usize, attribute: usize, time: usize) -> MaskEntry {
        let idx = time * self.n_items + item;
        if bit(self.fixed_mask[idx], attribute) == 0 {
            MaskEntry::Free
        } else if bit(self.fixed_values[idx], attribute) == 1 {
            MaskEntry::Fixed1
        } else {
            MaskEntry::Fixed0
        }
    }

    /// True when the row at (item, time) has at least one free entry.
    pub fn row_is_free(&self, item: usize, time: usize) -> bool {
        let full: Pattern = (1 << self.n_attributes) - 1;
        self.fixed_mask(item, time) != full
    }

    pub fn all_fixed(&self) -> bool {
        let full: Pattern = (1 << self.n_attributes) - 1;
        self.fixed_mask.iter().all(|&m| m == full)
    }

    /// Whether `pattern` agrees with the fixed entries of row (item, time).
    #[inline]
    pub fn admits(&self, item: usize, time: usize, pattern: Pattern) -> bool {
        let idx = time * self.n_items + item;
        pattern & self.fixed_mask[idx] == self.fixed_values[idx]
    }

    /// Writes a row, broadcasting across time in time-invariant mode.
    /// Fixed entries must be respected by the caller; this is asserted.
    pub fn set_row(&mut self, item: usize, time: usize, pattern: Pattern) {
        assert!(
            self.admits(item, time, pattern),
            "row update would change a fixed Q entry"
        );
        if self.time_invariant {
            for t in 0..self.n_times {
                self.rows[t * self.n_items + item] = pattern;
            }
        } else {
            self.rows[time * self.n_items + item] = pattern;
        }
    }

    /// Number of time points whose matrices are sampled separately.
    pub fn n_distinct_times(&self) -> usize {
        if self.time_invariant {
            1
        } else {
            self.n_times
        }
    }

    /// Counts (ones, zeros) over free entries, counting a shared
    /// time-invariant matrix once.
    pub fn free_entry_counts(&self) -> (usize, usize) {
        let mut ones = 0;
        let mut zeros = 0;
        for t in 0..self.n_distinct_times() {
            for j in 0..self.n_items {
                let idx = t * self.n_items + j;
                for k in 0..self.n_attributes {
                    if bit(self.fixed_mask[idx], k) == 0 {
                        if bit(self.rows[idx], k) == 1 {
                            ones += 1;
                        } else {
                            zeros += 1;
                        }
                    }
                }
            }
        }
        (ones, zeros)
    }
}

/// Mastery states over (person, attribute, time), one pattern per
/// (person, time).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeProfilePath {
    n_persons: usize,
    n_attributes: usize,
    n_times: usize,
    patterns: Vec<Pattern>,
}

impl AttributeProfilePath {
    pub fn new(n_persons: usize, n_attributes: usize, n_times: usize) -> Self {
        AttributeProfilePath {
            n_persons,
            n_attributes,
            n_times,
            patterns: vec![0; n_persons * n_times],
        }
    }

    pub fn from_patterns(
        n_persons: usize,
        n_attributes: usize,
        n_times: usize,
        patterns: Vec<Pattern>,
    ) -> Result<Self> {
        if patterns.len() != n_persons * n_times {
            return Err(Error::Shape(format!(
                "profile path has {} entries, expected {}",
                patterns.len(),
                n_persons * n_times
            )));
        }
        Ok(AttributeProfilePath {
            n_persons,
            n_attributes,
            n_times,
            patterns,
        })
    }

    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    #[inline]
    pub fn pattern(&self, person: usize, time: usize) -> Pattern {
        self.patterns[person * self.n_times + time]
    }

    #[inline]
    pub fn set_pattern(&mut self, person: usize, time: usize, pattern: Pattern) {
        self.patterns[person * self.n_times + time] = pattern;
    }

    pub fn get(&self, person: usize, attribute: usize, time: usize) -> u8 {
        bit(self.pattern(person, time), attribute)
    }

    /// The T patterns of one person.
    pub fn person(&self, person: usize) -> &[Pattern] {
        &self.patterns[person * self.n_times..(person + 1) * self.n_times]
    }

    pub fn person_mut(&mut self, person: usize) -> &mut [Pattern] {
        &mut self.patterns[person * self.n_times..(person + 1) * self.n_times]
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub(crate) fn patterns_mut(&mut self) -> &mut [Pattern] {
        &mut self.patterns
    }

    /// True when no (person, attribute) ever goes from mastered to not.
    pub fn is_monotone(&self) -> bool {
        (0..self.n_persons).all(|i| {
            self.person(i)
                .windows(2)
                .all(|w| w[0] & !w[1] == 0)
        })
    }

    /// Number of 1 -> 0 steps across all persons and attributes.
    pub fn count_losses(&self) -> usize {
        (0..self.n_persons)
            .map(|i| {
                self.person(i)
                    .windows(2)
                    .map(|w| (w[0] & !w[1]).count_ones() as usize)
                    .sum::<usize>()
            })
            .sum()
    }
}

/// DINA/DINO guessing and slipping parameters, indexed by `time * J + item`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    n_items: usize,
    n_times: usize,
    guessing: Vec<f64>,
    slipping: Vec<f64>,
}

impl ItemParams {
    pub fn new(
        n_items: usize,
        n_times: usize,
        guessing: Vec<f64>,
        slipping: Vec<f64>,
        monotone: bool,
    ) -> Result<Self> {
        let n = n_items * n_times;
        if guessing.len() != n || slipping.len() != n {
            return Err(Error::Shape(format!(
                "item parameters need {n} guessing and slipping values"
            )));
        }
        for (idx, (&g, &s)) in guessing.iter().zip(&slipping).enumerate() {
            if !(g > 0.0 && g < 1.0 && s > 0.0 && s < 1.0) {
                return Err(Error::ParameterRange(format!(
                    "item {} time {}: g = {g}, s = {s} must lie in (0, 1)",
                    idx % n_items,
                    idx / n_items
                )));
            }
            if monotone && g >= 1.0 - s {
                return Err(Error::ParameterRange(format!(
                    "item {} time {}: g = {g} violates g < 1 - s = {}",
                    idx % n_items,
                    idx / n_items,
                    1.0 - s
                )));
            }
        }
        Ok(ItemParams {
            n_items,
            n_times,
            guessing,
            slipping,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    #[inline]
    pub fn guessing(&self, item: usize, time: usize) -> f64 {
        self.guessing[time * self.n_items + item]
    }

    #[inline]
    pub fn slipping(&self, item: usize, time: usize) -> f64 {
        self.slipping[time * self.n_items + item]
    }

    pub(crate) fn set(&mut self, item: usize, time: usize, g: f64, s: f64) {
        let idx = time * self.n_items + item;
        self.guessing[idx] = g;
        self.slipping[idx] = s;
    }
}

/// GDINA coefficients for one item, on the probability scale.
///
/// `lambda[m]` is the effect of the subset `m` of the item's required
/// attributes, where bit `b` of `m` refers to the `b`-th required attribute in
/// increasing attribute order. `lambda[0]` is the intercept, singletons are
/// main effects, and `lambda[2^Kj - 1]` is the highest-order interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdinaItemCoefficients {
    required: Pattern,
    lambda: Vec<f64>,
}

impl GdinaItemCoefficients {
    /// Rejects coefficient vectors whose success probability leaves [0, 1]
    /// for some attribute pattern.
    pub fn new(required: Pattern, lambda: Vec<f64>) -> Result<Self> {
        let kj = required.count_ones() as usize;
        if lambda.len() != 1 << kj {
            return Err(Error::InfeasibleGdina(format!(
                "{} coefficients supplied for {kj} required attributes (need {})",
                lambda.len(),
                1usize << kj
            )));
        }
        if let Some(x) = lambda.iter().find(|x| !x.is_finite()) {
            return Err(Error::InfeasibleGdina(format!("non-finite coefficient {x}")));
        }
        let coeffs = GdinaItemCoefficients { required, lambda };
        for reduced in 0..(1u32 << kj) {
            let p = coeffs.reduced_probability(reduced);
            // rounding slack for coefficients rebuilt from probabilities
            if !(-1e-12..=1.0 + 1e-12).contains(&p) {
                return Err(Error::InfeasibleGdina(format!(
                    "success probability {p} for reduced pattern {reduced} lies outside [0, 1]"
                )));
            }
        }
        Ok(coeffs)
    }

    /// Builds coefficients from success probabilities of the `2^Kj` reduced
    /// latent groups via the Moebius transform.
    pub fn from_group_probabilities(required: Pattern, probs: &[f64]) -> Result<Self> {
        let kj = required.count_ones() as usize;
        if probs.len() != 1 << kj {
            return Err(Error::InfeasibleGdina(format!(
                "{} group probabilities supplied, need {}",
                probs.len(),
                1usize << kj
            )));
        }
        let mut lambda = probs.to_vec();
        for b in 0..kj {
            for m in 0..lambda.len() {
                if m & (1 << b) != 0 {
                    lambda[m] -= lambda[m ^ (1 << b)];
                }
            }
        }
        GdinaItemCoefficients::new(required, lambda)
    }

    /// The DINA special case: intercept `g`, top interaction `1 - s - g`.
    pub fn dina_constrained(required: Pattern, g: f64, s: f64) -> Result<Self> {
        let kj = required.count_ones() as usize;
        let mut lambda = vec![0.0; 1 << kj];
        lambda[0] = g;
        let top = (1 << kj) - 1;
        if top == 0 {
            // no required attribute: intercept only
            lambda[0] = g;
        } else {
            lambda[top] = 1.0 - s - g;
        }
        GdinaItemCoefficients::new(required, lambda)
    }

    pub fn required(&self) -> Pattern {
        self.required
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Maps a full attribute pattern onto the item's reduced pattern.
    pub fn reduce(&self, alpha: Pattern) -> Pattern {
        reduce_pattern(alpha, self.required)
    }

    /// Sum of all coefficients whose subset is mastered, accumulated in
    /// increasing subset order.
    pub fn reduced_probability(&self, reduced: Pattern) -> f64 {
        let mut p = 0.0;
        for (m, &l) in self.lambda.iter().enumerate() {
            if (m as Pattern) & !reduced == 0 {
                p += l;
            }
        }
        p
    }
}

/// Compresses `alpha` onto the positions set in `mask`, preserving order.
#[inline]
pub fn reduce_pattern(alpha: Pattern, mask: Pattern) -> Pattern {
    let mut out = 0;
    let mut b = 0;
    let mut m = mask;
    while m != 0 {
        let k = m.trailing_zeros();
        if alpha & (1 << k) != 0 {
            out |= 1 << b;
        }
        b += 1;
        m &= m - 1;
    }
    out
}

/// Intercepts and per-covariate slopes for one logistic model per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitCoefficients {
    n_covariates: usize,
    pub intercepts: Vec<f64>,
    /// Row-major (attribute, covariate).
    pub slopes: Vec<f64>,
}

impl LogitCoefficients {
    pub fn new(n_covariates: usize, intercepts: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if slopes.len() != intercepts.len() * n_covariates {
            return Err(Error::Shape(format!(
                "{} slopes for {} attributes x {n_covariates} covariates",
                slopes.len(),
                intercepts.len()
            )));
        }
        if intercepts.iter().chain(&slopes).any(|x| !x.is_finite()) {
            return Err(Error::ParameterRange(
                "regression coefficients must be finite".into(),
            ));
        }
        Ok(LogitCoefficients {
            n_covariates,
            intercepts,
            slopes,
        })
    }

    pub fn constant(n_attributes: usize, n_covariates: usize, intercept: f64) -> Self {
        LogitCoefficients {
            n_covariates,
            intercepts: vec![intercept; n_attributes],
            slopes: vec![0.0; n_attributes * n_covariates],
        }
    }

    pub fn n_attributes(&self) -> usize {
        self.intercepts.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn slope(&self, attribute: usize, covariate: usize) -> f64 {
        self.slopes[attribute * self.n_covariates + covariate]
    }

    #[inline]
    pub fn linear_predictor(&self, attribute: usize, z: &[f64]) -> f64 {
        let c = self.n_covariates;
        let slopes = &self.slopes[attribute * c..(attribute + 1) * c];
        let mut x = self.intercepts[attribute];
        for (b, zc) in slopes.iter().zip(z) {
            x += b * zc;
        }
        x
    }

    /// Intercept followed by slopes for one attribute.
    pub fn block(&self, attribute: usize) -> Vec<f64> {
        let c = self.n_covariates;
        let mut v = Vec::with_capacity(c + 1);
        v.push(self.intercepts[attribute]);
        v.extend_from_slice(&self.slopes[attribute * c..(attribute + 1) * c]);
        v
    }

    pub fn set_block(&mut self, attribute: usize, block: &[f64]) {
        let c = self.n_covariates;
        self.intercepts[attribute] = block[0];
        self.slopes[attribute * c..(attribute + 1) * c].copy_from_slice(&block[1..]);
    }
}

/// Initial-mastery logits: one intercept and slope vector per attribute.
pub type InitialModelCoefficients = LogitCoefficients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Free,
    SoftMonotone,
    Absorbing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCoefficients {
    pub gain: LogitCoefficients,
    /// `None` in absorbing mode, where loss is structurally impossible.
    pub loss: Option<LogitCoefficients>,
    pub loss_mode: LossMode,
}

impl TransitionCoefficients {
    pub fn new(
        gain: LogitCoefficients,
        loss: Option<LogitCoefficients>,
        loss_mode: LossMode,
    ) -> Result<Self> {
        match (loss_mode, &loss) {
            (LossMode::Absorbing, Some(_)) => Err(Error::Config(
                "absorbing mode carries no loss coefficients".into(),
            )),
            (LossMode::Free | LossMode::SoftMonotone, None) => Err(Error::Config(
                "loss coefficients are required unless mastery is absorbing".into(),
            )),
            _ => Ok(TransitionCoefficients {
                gain,
                loss,
                loss_mode,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityState {
    pub theta: f64,
    pub prior_alpha: f64,
    pub prior_beta: f64,
}

impl SparsityState {
    pub fn new(theta: f64, prior_alpha: f64, prior_beta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::ParameterRange(format!("theta = {theta} outside (0, 1)")));
        }
        if !(prior_alpha > 0.0 && prior_beta > 0.0) {
            return Err(Error::ParameterRange(format!(
                "Beta({prior_alpha}, {prior_beta}) prior needs positive shapes"
            )));
        }
        Ok(SparsityState {
            theta,
            prior_alpha,
            prior_beta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementModel {
    Dina,
    Dino,
    Gdina,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    /// Every entry sampled, separately per time point.
    Free,
    /// Q is known; no Q or theta updates.
    Fixed,
    /// Some entries fixed by a mask, the rest sampled.
    Partial,
    /// One free Q shared by all time points.
    TimeInvariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_kept: usize,
    pub thin: usize,
    pub seed: u64,
    pub measurement_model: MeasurementModel,
    pub q_mode: QMode,
    pub loss_mode: LossMode,
    /// Upper end of the Uniform(0, u) draw for initial g and s.
    pub item_init_upper: f64,
    pub regression_prior_sd: f64,
    /// Prior mean of loss intercepts under soft-monotone loss.
    pub loss_intercept_prior_mean: f64,
    pub theta_prior: (f64, f64),
    pub identifiability_min_items_per_attribute: usize,
    /// Enforce g < 1 - s for DINA/DINO items.
    pub monotone_items: bool,
    /// Random-walk Metropolis steps per regression block per sweep.
    pub regression_steps: usize,
    pub record_alpha_trace: bool,
    pub draw_format: DrawFormat,
    pub rhat_threshold: f64,
    pub ci_level: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_chains: 4,
            n_warmup: 1000,
            n_kept: 1000,
            thin: 1,
            seed: 1,
            measurement_model: MeasurementModel::Dina,
            q_mode: QMode::Free,
            loss_mode: LossMode::SoftMonotone,
            item_init_upper: 0.3,
            regression_prior_sd: 1.0,
            loss_intercept_prior_mean: -2.0,
            theta_prior: (1.0, 1.0),
            identifiability_min_items_per_attribute: 3,
            monotone_items: false,
            regression_steps: 10,
            record_alpha_trace: false,
            draw_format: DrawFormat::Jsonl,
            rhat_threshold: 1.1,
            ci_level: 0.95,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_chains == 0 {
            return fail("n_chains must be at least 1");
        }
        if self.n_kept == 0 {
            return fail("n_kept must be at least 1");
        }
        if self.thin == 0 {
            return fail("thin must be at least 1");
        }
        if !(self.item_init_upper > 0.0 && self.item_init_upper < 1.0) {
            return fail("item_init_upper must lie in (0, 1)");
        }
        if !(self.regression_prior_sd > 0.0) {
            return fail("regression_prior_sd must be positive");
        }
        if !(self.theta_prior.0 > 0.0 && self.theta_prior.1 > 0.0) {
            return fail("theta prior shapes must be positive");
        }
        if self.identifiability_min_items_per_attribute == 0 {
            return fail("identifiability_min_items_per_attribute must be at least 1");
        }
        if self.regression_steps == 0 {
            return fail("regression_steps must be at least 1");
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return fail("ci_level must lie in (0, 1)");
        }
        if self.monotone_items && self.item_init_upper >= 0.5 {
            return fail("monotone_items needs item_init_upper < 0.5 so initial values satisfy g < 1 - s");
        }
        Ok(())
    }

    /// Post-warmup iterations actually run.
    pub fn n_sampling_iterations(&self) -> usize {
        self.n_kept * self.thin
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn covs(names: &[&str], n: usize, values: Vec<f64>) -> CovariateMatrix {
        CovariateMatrix::new(n, names.iter().map(|s| s.to_string()).collect(), values).unwrap()
    }

    #[test]
    fn pattern_bits_roundtrip() {
        let p = pattern_from_bits(&[1, 0, 1]);
        assert_eq!(p, 0b101);
        assert_eq!(pattern_to_bits(p, 3), vec![1, 0, 1]);
        assert_eq!(reduce_pattern(0b101, 0b110), 0b10);
        assert_eq!(reduce_pattern(0b111, 0b101), 0b11);
    }

    #[test]
    fn accepts_empirical_sized_panel() {
        let (n, j, t, c) = (263, 6, 2, 12);
        let dims = DatasetDimensions::new(n, j, 3, t, c).unwrap();
        let values = (0..n * j * t).map(|x| Some((x % 2) as u8)).collect();
        let panel = ResponsePanel::from_values(n, j, t, values).unwrap();
        let cov = covs(
            &["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l"],
            n,
            (0..n * c).map(|x| x as f64).collect(),
        );
        let ds = validate_dataset(&panel, &cov, &dims).unwrap();
        assert_eq!(ds.dims().n_persons, 263);
    }

    #[test]
    fn rejects_non_binary_cell_with_coordinates() {
        let dims = DatasetDimensions::new(2, 2, 1, 1, 1).unwrap();
        let mut panel = ResponsePanel::new(2, 2, 1);
        for i in 0..2 {
            for j in 0..2 {
                panel.set(i, j, 0, Some(1));
            }
        }
        panel.set(0, 0, 0, Some(2));
        let cov = covs(&["z"], 2, vec![0.0, 1.0]);
        match validate_dataset(&panel, &cov, &dims) {
            Err(Error::Validation(report)) => {
                assert_eq!(
                    report.violations,
                    vec![Violation::NonBinaryResponse {
                        person: 0,
                        item: 0,
                        time: 0,
                        value: 2
                    }]
                );
                assert!(report.to_string().contains("(0,0,0)"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_nan_covariate_column_by_name() {
        let dims = DatasetDimensions::new(2, 1, 1, 1, 2).unwrap();
        let panel = ResponsePanel::from_values(2, 1, 1, vec![Some(0), Some(1)]).unwrap();
        let cov = covs(&["ok", "bad"], 2, vec![1.0, f64::NAN, 2.0, f64::NAN]);
        let err = validate_dataset(&panel, &cov, &dims).unwrap_err();
        match err {
            Error::Validation(report) => {
                assert_eq!(report.violations.len(), 1);
                assert!(matches!(
                    &report.violations[0],
                    Violation::NonFiniteCovariate { column: 1, name, .. } if name == "bad"
                ));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_all_violations_at_once() {
        let dims = DatasetDimensions::new(2, 2, 1, 2, 1).unwrap();
        let mut panel = ResponsePanel::new(2, 2, 2);
        panel.set(0, 0, 0, Some(7));
        panel.set(0, 0, 1, Some(1));
        panel.set(1, 1, 0, Some(0));
        let cov = covs(&["z"], 2, vec![f64::INFINITY, 0.0]);
        let Err(Error::Validation(report)) = validate_dataset(&panel, &cov, &dims) else {
            panic!("expected validation failure");
        };
        // bad value, empty slice for person 1 at time 1, non-finite covariate
        assert_eq!(report.violations.len(), 3);
        assert!(report
            .violations
            .contains(&Violation::EmptySlice { person: 1, time: 1 }));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dims = DatasetDimensions::new(3, 2, 1, 1, 1).unwrap();
        let panel = ResponsePanel::new(2, 2, 1);
        let cov = covs(&["z"], 2, vec![0.0, 1.0]);
        let Err(Error::Validation(report)) = validate_dataset(&panel, &cov, &dims) else {
            panic!("expected validation failure");
        };
        assert!(matches!(
            report.violations[0],
            Violation::ShapeMismatch { expected: 3, found: 2, .. }
        ));
    }

    #[test]
    fn dimension_limits() {
        assert!(DatasetDimensions::new(1, 1, 16, 1, 1).is_ok());
        assert!(DatasetDimensions::new(1, 1, 17, 1, 1).is_err());
        assert!(DatasetDimensions::new(1, 0, 1, 1, 1).is_err());
    }

    #[test]
    fn standardize_three_point_column() {
        let cov = covs(&["x", "y"], 3, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
        let out = standardize_covariates(&cov, &[0]).unwrap();
        let col = out.column(0);
        for (a, b) in col.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.column(1), vec![10.0, 20.0, 30.0]);
        assert_eq!(out.standardized_flags(), &[true, false]);
    }

    #[test]
    fn standardize_is_idempotent() {
        let cov = covs(&["x"], 5, vec![0.3, -1.2, 4.0, 2.2, 0.0]);
        let once = standardize_covariates(&cov, &[0]).unwrap();
        let twice = standardize_covariates(&once, &[0]).unwrap();
        for (a, b) in once.column(0).iter().zip(twice.column(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        let col = once.column(0);
        let mean = col.iter().sum::<f64>() / 5.0;
        let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let cov = covs(&["x"], 3, vec![2.0, 2.0, 2.0]);
        assert!(matches!(
            standardize_covariates(&cov, &[0]),
            Err(Error::ZeroVariance { column: 0 })
        ));
    }

    #[test]
    fn gdina_rejects_infeasible_coefficients() {
        assert!(GdinaItemCoefficients::new(0b11, vec![0.5, 0.4, 0.4, 0.0]).is_err());
        assert!(GdinaItemCoefficients::new(0b11, vec![0.1, 0.3, 0.4, 0.0]).is_ok());
        assert!(GdinaItemCoefficients::new(0b11, vec![0.1, 0.3]).is_err());
    }

    #[test]
    fn gdina_moebius_roundtrip() {
        let probs = [0.1, 0.4, 0.3, 0.9];
        let c = GdinaItemCoefficients::from_group_probabilities(0b101, &probs).unwrap();
        for (m, p) in probs.iter().enumerate() {
            assert!((c.reduced_probability(m as Pattern) - p).abs() < 1e-15);
        }
    }

    #[test]
    fn time_invariant_rows_are_broadcast() {
        let mut q = QMatrixSet::from_rows(2, 2, 3, vec![1, 2, 1, 2, 1, 2], true).unwrap();
        q.set_row(0, 1, 3);
        for t in 0..3 {
            assert_eq!(q.row(0, t), 3);
        }
        assert_eq!(q.free_entry_counts(), (3, 1));
        assert!(QMatrixSet::from_rows(2, 2, 2, vec![1, 2, 2, 1], true).is_err());
    }

    #[test]
    fn mask_pins_entries() {
        use MaskEntry::*;
        let q = QMatrixSet::from_rows(2, 2, 1, vec![0, 3], false)
            .unwrap()
            .with_mask(&[vec![Fixed1, Free], vec![Fixed0, Free]])
            .unwrap();
        assert_eq!(q.row(0, 0), 1);
        assert_eq!(q.row(1, 0), 2);
        assert!(q.admits(0, 0, 3));
        assert!(!q.admits(0, 0, 2));
        assert_eq!(q.mask_entry(1, 0, 0), Fixed0);
    }

    #[test]
    fn absorbing_path_check() {
        let path = AttributeProfilePath::from_patterns(1, 2, 3, vec![0b01, 0b11, 0b10]).unwrap();
        assert!(!path.is_monotone());
        assert_eq!(path.count_losses(), 1);
    }
}
