//! Simulation-study harness.

pub mod design;
pub mod generate;
pub mod metrics;
pub mod study;

pub use design::{builtin_q, hash_seed, DesignCell, Grid, SimulationDesign, Sparsity, TruthSpec};
pub use generate::{generate_dataset, simulate_replication, true_parameters, SimulatedData, TrueParameters, TruthRecord};
pub use metrics::{aar, bootstrap_se, parameter_errors, profiles_to_path, q_recovery, ErrorSummary, QRecovery};
pub use study::{
    aggregate, format_metrics, run_replication, run_study, score_estimates, score_replication, BlockError, CellReport, MetricRow,
    ReplicationResult, StudyOptions, METRICS_HEADER,
};
