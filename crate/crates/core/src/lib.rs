//! Bayesian estimation of time-dependent DINA-family diagnostic models with
//! an unknown Q-matrix, covariate-driven attribute transitions and a
//! simulation-study harness.

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod measurement;
pub mod model;
pub mod sampler;
pub mod structure;
pub mod synthetic;

pub use error::{Error, Result};
