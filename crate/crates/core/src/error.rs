use std::path::PathBuf;

use thiserror::Error;

use crate::model::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimensions(String),

    #[error("dataset validation failed:\n{0}")]
    Validation(ValidationReport),

    #[error("covariate column {column} has zero variance")]
    ZeroVariance { column: usize },

    #[error("parameter out of range: {0}")]
    ParameterRange(String),

    #[error("infeasible GDINA coefficients: {0}")]
    InfeasibleGdina(String),

    #[error("Q-matrix: {0}")]
    QMatrix(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pattern distribution is not normalized (sum = {0})")]
    Unnormalized(f64),

    #[error("no kept draws")]
    EmptyDraws,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("loss transitions are structurally zero in absorbing mode")]
    AbsorbingLoss,

    #[error("bootstrap needs at least two replications, got {0}")]
    TooFewReplications(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("simulation design: {0}")]
    Design(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
