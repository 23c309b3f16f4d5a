//! Multivariate age-period-cohort model: data layout, cohort indexing,
//! linear predictor, priors and likelihood.

mod prior;
mod spec;
mod state;
mod table;

pub use prior::{
    correlated_rw2_quad_form, fisher_z_to_rho, log_likelihood, log_likelihood_at, log_prior,
    overdispersion_log_density, overdispersion_quad_form, poisson_cell_log_lik, rho_star_log_prior,
    rho_to_fisher_z, rw2_family_log_density, second_differences,
};
pub use spec::{
    ApcModelSpec, Component, Family, FamilySpec, Likelihood, PrecisionPrior, Sharing,
    OVERDISPERSION_PRECISION_PRIOR, TIME_PRECISION_PRIOR,
};
pub use state::{family_constraints, linear_predictor, ApcState, EffectBlock, Hyperparameters};
pub use table::{cohort_index, Dims, RegistryTable};
