//! Gaussian Markov random fields: RW2 structure matrices, exchangeable
//! correlation across strata, their Kronecker product and exact
//! constrained sampling.

mod correlation;
mod rw2;
mod sample;
mod sparse;

pub use correlation::{
    admissible_lower_bound, uniform_correlation_inverse, uniform_correlation_logdet,
    UniformCorrelation,
};
pub use rw2::{
    build_kronecker_precision, build_rw2_precision, rw2_log_generalized_determinant,
    Rw2Structure,
};
pub use sample::{gmrf_log_density, sample_constrained_gmrf, LinearConstraintSet, FACTOR_JITTER};
pub use sparse::SparsePrecision;
