//! File formats.

pub mod draws;
pub mod reports;
pub mod tables;

pub use draws::{draw_file_name, format_draws, read_alpha_trace, read_draws, write_alpha_trace, write_draws, DrawTable};
pub use reports::*;
pub use tables::{
    format_q, parse_q, read_covariates, read_mask, read_q, read_responses, read_responses_from, write_covariates,
    write_q, write_responses,
};

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &std::path::Path, contents: &str) -> crate::Result<()> {
    tables::write_string(path, contents)
}
