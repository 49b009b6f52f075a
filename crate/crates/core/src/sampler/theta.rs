//! Conjugate update of the Q sparsity parameter.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::model::{QMatrixSet, SparsityState};

/// Shapes of the Beta full conditional: prior shapes plus the number of ones
/// and zeros among free Q entries.
pub fn theta_posterior_shapes(q: &QMatrixSet, sparsity: &SparsityState) -> (f64, f64) {
    let (ones, zeros) = q.free_entry_counts();
    (sparsity.prior_alpha + ones as f64, sparsity.prior_beta + zeros as f64)
}

pub(crate) fn update_theta<R: Rng + ?Sized>(rng: &mut R, q: &QMatrixSet, sparsity: &mut SparsityState) {
    let (a, b) = theta_posterior_shapes(q, sparsity);
    let draw: f64 = Beta::new(a, b).expect("positive Beta shapes").sample(rng);
    // keep theta inside (0, 1) so log-priors stay finite
    sparsity.theta = draw.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
}
