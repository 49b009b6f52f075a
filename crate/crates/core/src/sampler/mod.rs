//! Markov chain Monte Carlo over all model unknowns.

pub mod alpha;
pub mod chain;
pub mod items;
pub mod qrow;
pub mod regression;
pub mod rng;
pub mod state;
pub mod theta;

pub use alpha::{alpha_step_conditional, sample_alpha_path};
pub use chain::{
    fit, initial_state, posterior_mastery_probabilities, run_chain, AcceptanceRecord, ChainDraws,
    ChainSampler, MasteryEstimates, PosteriorDraws,
};
pub use items::EtaCounts;
pub use qrow::q_row_conditional;
pub use regression::{AdaptiveProposal, RegressionKind};
pub use rng::{Block, ChainKey};
pub use state::{expand_lambda, DrawLayout, ParameterState, ResponseTally};
pub use theta::theta_posterior_shapes;
