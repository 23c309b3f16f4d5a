//! Block MCMC for the multivariate APC model.
//!
//! Each sweep updates, in order: intercepts, age, period and cohort
//! effects (joint Gaussian block draws under their constraints), every
//! eta cell block (Metropolis-Hastings with a Taylor-expanded Gaussian
//! proposal), the precisions (Gibbs) and the Fisher-z correlations
//! (random-walk Metropolis, scale adapted during burn-in only).

mod chain;
mod config;
pub mod diagnostics;
mod updates;

pub use chain::{
    chain_rng, hyperparameter_functionals, run_chain, run_chain_with, AcceptanceCounter,
    ChainOutput, ChainStats, ParameterDiagnostic, PosteriorSamples,
};
pub use config::SamplerConfig;
pub use diagnostics::{effective_sample_size, potential_scale_reduction, split_potential_scale_reduction};
pub use updates::{
    correlation_log_target, family_prior_precision, precision_full_conditional,
    precision_sufficient_statistics, update_correlation, update_effect_block, update_eta_block,
    update_intercepts, update_precision, EtaUpdate, UpdateContext,
};
