pub mod diagnose;
pub mod fit;
pub mod metrics;
pub mod simulate;
pub mod study;
pub mod validate;
