//! Simulation designs: the grid, the generating values and the fit settings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::parse_q;
use crate::model::{FitConfig, LossMode, QMatrixSet};
use crate::structure::check_identifiability;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    Sparse,
    Dense,
}

impl Sparsity {
    /// Prior mean of the inclusion probability theta.
    pub fn prior_mean(self) -> f64 {
        match self {
            Sparsity::Sparse => 0.3,
            Sparsity::Dense => 0.5,
        }
    }
}

impl fmt::Display for Sparsity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sparsity::Sparse => "sparse",
            Sparsity::Dense => "dense",
        })
    }
}

fn default_persons() -> Vec<usize> {
    vec![200, 400, 600]
}

fn default_items() -> Vec<usize> {
    vec![6, 18, 30]
}

fn default_sparsity() -> Vec<Sparsity> {
    vec![Sparsity::Sparse, Sparsity::Dense]
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default = "default_persons")]
    pub n_persons: Vec<usize>,
    #[serde(default = "default_items")]
    pub n_items: Vec<usize>,
    #[serde(default = "default_sparsity")]
    pub sparsity: Vec<Sparsity>,
    #[serde(default = "three")]
    pub n_attributes: usize,
    #[serde(default = "three")]
    pub n_times: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            n_persons: default_persons(),
            n_items: default_items(),
            sparsity: default_sparsity(),
            n_attributes: 3,
            n_times: 3,
        }
    }
}

/// Generating values. Every covariate `c < K` drives attribute `c` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    pub n_covariates: usize,
    pub beta0: Vec<f64>,
    pub beta_z_own: f64,
    pub gamma01_intercept: f64,
    pub gamma01_slope: f64,
    pub gamma10_intercept: f64,
    pub gamma10_slope: f64,
    pub loss_mode: LossMode,
    pub guess_range: (f64, f64),
    pub slip_range: (f64, f64),
    /// Beta shapes for theta; by default derived from the cell.
    pub sparsity_prior: Option<(f64, f64)>,
}

impl Default for TruthSpec {
    fn default() -> Self {
        TruthSpec {
            n_covariates: 3,
            beta0: vec![-0.5, 0.0, 0.5],
            beta_z_own: 0.5,
            gamma01_intercept: 0.5,
            gamma01_slope: 0.5,
            gamma10_intercept: -2.0,
            gamma10_slope: 0.0,
            loss_mode: LossMode::SoftMonotone,
            guess_range: (0.1, 0.3),
            slip_range: (0.1, 0.3),
            sparsity_prior: None,
        }
    }
}

fn default_seed() -> u64 {
    20_240_601
}

fn default_replications() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDesign {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub truth: TruthSpec,
    #[serde(default)]
    pub fit: FitConfig,
    /// True-Q CSV per `j<J>_<sparsity>` key, relative to the design file.
    #[serde(default)]
    pub q_files: BTreeMap<String, PathBuf>,
    #[serde(skip)]
    q_matrices: BTreeMap<String, QMatrixSet>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignCell {
    pub n_persons: usize,
    pub n_items: usize,
    pub sparsity: Sparsity,
    pub n_attributes: usize,
    pub n_times: usize,
}

impl DesignCell {
    pub fn name(&self) -> String {
        format!("n{}_j{}_{}", self.n_persons, self.n_items, self.sparsity)
    }

    pub fn q_key(&self) -> String {
        format!("j{}_{}", self.n_items, self.sparsity)
    }

    /// Sparsity-prior concentration: 10, 15 and 20 for 6, 18 and 30 items,
    /// linear in between.
    pub fn prior_concentration(&self) -> f64 {
        10.0 + 5.0 * (self.n_items as f64 - 6.0) / 12.0
    }
}

pub fn builtin_q(key: &str) -> Option<&'static str> {
    Some(match key {
        "j6_sparse" => include_str!("../../data/qmatrices/j6_sparse.csv"),
        "j6_dense" => include_str!("../../data/qmatrices/j6_dense.csv"),
        "j18_sparse" => include_str!("../../data/qmatrices/j18_sparse.csv"),
        "j18_dense" => include_str!("../../data/qmatrices/j18_dense.csv"),
        "j30_sparse" => include_str!("../../data/qmatrices/j30_sparse.csv"),
        "j30_dense" => include_str!("../../data/qmatrices/j30_dense.csv"),
        _ => return None,
    })
}

/// First eight bytes of SHA-256 over `parts` joined by `/`.
pub fn hash_seed(parts: &[&str]) -> u64 {
    let digest = Sha256::digest(parts.join("/").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

impl SimulationDesign {
    /// Parses a TOML design; relative Q paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut d: SimulationDesign = toml::from_str(text).map_err(|e| Error::Design(e.to_string()))?;
        d.resolve(base)?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        SimulationDesign::from_toml_str(&text, base).map_err(|e| match e {
            Error::Design(m) => Error::Design(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    fn resolve(&mut self, base: &Path) -> Result<()> {
        let g = &self.grid;
        if g.n_persons.is_empty() || g.n_items.is_empty() || g.sparsity.is_empty() {
            return Err(Error::Design("grid has an empty axis".into()));
        }
        if g.n_persons.contains(&0) {
            return Err(Error::Design("n_persons must be positive".into()));
        }
        if self.replications == 0 {
            return Err(Error::Design("replications must be at least 1".into()));
        }
        let t = &self.truth;
        if t.beta0.len() != g.n_attributes {
            return Err(Error::Design(format!(
                "beta0 has {} entries, expected {}",
                t.beta0.len(),
                g.n_attributes
            )));
        }
        if t.n_covariates == 0 {
            return Err(Error::Design("n_covariates must be at least 1".into()));
        }
        for (name, (lo, hi)) in [("guess_range", t.guess_range), ("slip_range", t.slip_range)] {
            if !(0.0 < lo && lo <= hi && hi < 1.0) {
                return Err(Error::Design(format!("{name} must satisfy 0 < lo <= hi < 1")));
            }
        }
        self.fit.validate().map_err(|e| Error::Design(e.to_string()))?;
        let min_items = self.fit.identifiability_min_items_per_attribute;
        for cell in self.cells() {
            let key = cell.q_key();
            if self.q_matrices.contains_key(&key) {
                continue;
            }
            let q = match self.q_files.get(&key) {
                Some(p) => {
                    let path = base.join(p);
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    parse_q(text.as_bytes(), &path, Some(cell.n_times), false)?
                }
                None => {
                    let text = builtin_q(&key)
                        .ok_or_else(|| Error::Design(format!("no true Q-matrix for {key}; add it under [q_files]")))?;
                    parse_q(text.as_bytes(), Path::new(&key), Some(cell.n_times), false)?
                }
            };
            if q.n_items() != cell.n_items || q.n_attributes() != cell.n_attributes {
                return Err(Error::Design(format!(
                    "true Q-matrix {key} is {}x{}, expected {}x{}",
                    q.n_items(),
                    q.n_attributes(),
                    cell.n_items,
                    cell.n_attributes
                )));
            }
            for tt in 0..q.n_times() {
                let r = check_identifiability(q.matrix(tt), q.n_attributes(), min_items);
                for v in r.violations {
                    self.warnings.push(format!("true Q {key} at time {}: {}", tt + 1, v.detail));
                }
            }
            self.q_matrices.insert(key, q);
        }
        Ok(())
    }

    /// Grid points in (N, J, sparsity) order.
    pub fn cells(&self) -> Vec<DesignCell> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &n in &g.n_persons {
            for &j in &g.n_items {
                for &s in &g.sparsity {
                    out.push(DesignCell {
                        n_persons: n,
                        n_items: j,
                        sparsity: s,
                        n_attributes: g.n_attributes,
                        n_times: g.n_times,
                    });
                }
            }
        }
        out
    }

    pub fn true_q(&self, cell: &DesignCell) -> Result<&QMatrixSet> {
        self.q_matrices
            .get(&cell.q_key())
            .ok_or_else(|| Error::Design(format!("no true Q-matrix for {}", cell.q_key())))
    }

    pub fn sparsity_prior(&self, cell: &DesignCell) -> (f64, f64) {
        self.truth.sparsity_prior.unwrap_or_else(|| {
            let (m, c) = (cell.sparsity.prior_mean(), cell.prior_concentration());
            (m * c, (1.0 - m) * c)
        })
    }

    /// Fit settings for one replication.
    pub fn fit_config(&self, cell: &DesignCell, seed: u64) -> FitConfig {
        FitConfig {
            seed,
            theta_prior: self.sparsity_prior(cell),
            ..self.fit.clone()
        }
    }

    pub fn replication_seed(&self, cell: &DesignCell, replication: usize) -> u64 {
        self.seed ^ hash_seed(&[&cell.name(), &replication.to_string()])
    }

    pub fn cell_seed(&self, cell: &DesignCell, tag: &str) -> u64 {
        self.seed ^ hash_seed(&[&cell.name(), tag])
    }
}
