//! Bayesian correlated multivariate age-period-cohort models for registry
//! count data.
//!
//! The crate covers the full pipeline: intrinsic GMRF priors with
//! exchangeable cross-stratum correlation ([`gmrf`]), the APC model itself
//! ([`model`]), a block MCMC sampler ([`sampler`]), posterior predictive
//! summaries and cross-prediction experiments ([`forecast`]), a
//! quasi-Poisson Lee-Carter baseline ([`leecarter`]) and proper scoring
//! ([`scoring`]).

pub mod error;
pub mod forecast;
pub mod gmrf;
pub mod io;
pub mod leecarter;
pub mod model;
pub mod sampler;
pub mod scoring;
pub mod synth;

pub use error::{Error, Result};
