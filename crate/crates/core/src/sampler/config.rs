use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MCMC run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub seed: u64,
    /// Target acceptance of the random-walk updates on rho*.
    pub target_acceptance: f64,
    /// Report progress every this many iterations (0 disables).
    pub log_every: usize,
    /// Initial random-walk scale on the rho* scale.
    pub initial_step: f64,
    /// `exp(eta)` is evaluated with eta clamped to `[-eta_clamp, eta_clamp]`.
    pub eta_clamp: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 350_000,
            burn_in: 50_000,
            thinning: 20,
            chains: 2,
            seed: 1,
            target_acceptance: 0.40,
            log_every: 0,
            initial_step: 0.5,
            eta_clamp: 40.0,
        }
    }
}

impl SamplerConfig {
    pub fn new(iterations: usize, burn_in: usize, thinning: usize, chains: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            thinning,
            chains,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thinning == 0 || self.chains == 0 {
            return Err(Error::InvalidParameter(
                "iterations, thinning and chains must be positive".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidParameter(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidParameter("target acceptance must lie in (0, 1)".into()));
        }
        if !(self.initial_step > 0.0 && self.eta_clamp > 0.0) {
            return Err(Error::InvalidParameter("step size and clamp must be positive".into()));
        }
        Ok(())
    }

    /// Draws kept per chain: `floor((iterations - burn_in) / thinning)`.
    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }
}
