use std::f64::consts::PI;

use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::gmrf::{rw2_log_generalized_determinant, UniformCorrelation};

use super::spec::{ApcModelSpec, Component, Family, Likelihood, PrecisionPrior};
use super::state::{linear_predictor, ApcState, EffectBlock};
use super::table::{Dims, RegistryTable};

/// `rho = (exp(rho*) - 1) / (exp(rho*) + R - 1)`, mapping R onto
/// `(-1/(R-1), 1)`.
pub fn fisher_z_to_rho(rho_star: f64, strata: usize) -> Result<UniformCorrelation> {
    UniformCorrelation::from_fisher_z(strata, rho_star)
}

/// `rho* = log((1 + rho (R-1)) / (1 - rho))`.
pub fn rho_to_fisher_z(rho: f64, strata: usize) -> Result<f64> {
    Ok(UniformCorrelation::new(strata, rho)?.fisher_z())
}

/// `sum_t d_t^T C^{-1} d_t` over second-difference vectors `d_t` across
/// strata, i.e. `x^T (C^{-1} (x) P_1) x` with unit RW2 structure `P_1`.
pub fn correlated_rw2_quad_form(block: &EffectBlock, corr: &UniformCorrelation) -> f64 {
    let strata = block.strata();
    let diffs: Vec<Vec<f64>> = (0..strata).map(|r| block.second_differences(r)).collect();
    let steps = diffs.first().map_or(0, Vec::len);
    let mut d = vec![0.0; strata];
    let mut acc = 0.0;
    for t in 0..steps {
        for r in 0..strata {
            d[r] = diffs[r][t];
        }
        acc += if strata == 1 {
            d[0] * d[0]
        } else {
            corr.inverse_bilinear(&d, &d)
        };
    }
    acc
}

/// Intrinsic (correlated) RW2 log density of a family block, up to the
/// `2 pi` constant: `0.5 log|kappa C^{-1} (x) P_1|* - 0.5 kappa x^T (C^{-1} (x) P_1) x`.
pub fn rw2_family_log_density(block: &EffectBlock, kappa: f64, corr: &UniformCorrelation) -> f64 {
    let n = block.len();
    let strata = block.strata() as f64;
    let log_gdet = (n as f64 - 2.0) * (-corr.log_det())
        + strata * rw2_log_generalized_determinant(n, kappa);
    0.5 * log_gdet - 0.5 * kappa * correlated_rw2_quad_form(block, corr)
}

/// `sum_{ij} z_ij^T C^{-1} z_ij` over all cell blocks.
pub fn overdispersion_quad_form(z: &[f64], dims: Dims, corr: &UniformCorrelation) -> f64 {
    z.chunks(dims.strata)
        .map(|zij| corr.inverse_bilinear(zij, zij))
        .sum()
}

/// Normalized Gaussian log density of every `z_ij ~ N(0, C / kappa)`.
pub fn overdispersion_log_density(z: &[f64], dims: Dims, kappa: f64, corr: &UniformCorrelation) -> f64 {
    let r = dims.strata as f64;
    let blocks = dims.blocks() as f64;
    blocks * (0.5 * r * (kappa / (2.0 * PI)).ln() - 0.5 * corr.log_det())
        - 0.5 * kappa * overdispersion_quad_form(z, dims, corr)
}

/// Normal(0, 1/precision) log density of a Fisher-z correlation; zero for
/// the improper `precision = 0` case.
pub fn rho_star_log_prior(rho_star: f64, precision: f64) -> f64 {
    if precision == 0.0 {
        0.0
    } else {
        0.5 * (precision / (2.0 * PI)).ln() - 0.5 * precision * rho_star * rho_star
    }
}

/// Joint log prior: RW2 families, overdispersion, Gamma hyperpriors and
/// Fisher-z priors. Intercepts are flat.
pub fn log_prior(state: &ApcState, spec: &ApcModelSpec, dims: Dims) -> Result<f64> {
    state.check_dims(dims)?;
    spec.validate(dims.strata)?;
    let mut lp = 0.0;
    for c in Component::ALL {
        let fs = spec.component(c);
        let kappa = state.hyper.precision(c);
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{} precision must be positive, got {kappa}",
                c.name()
            )));
        }
        let corr = state.correlation(c, spec, dims.strata)?;
        lp += match c.family() {
            Some(f) => rw2_family_log_density(state.effects(f), kappa, &corr),
            None => overdispersion_log_density(&state.overdispersion, dims, kappa, &corr),
        };
        if let PrecisionPrior::Gamma { .. } = fs.precision {
            lp += fs.precision.log_density(kappa);
        }
        if fs.updates_correlation(dims.strata) {
            lp += rho_star_log_prior(state.hyper.rho_star(c), fs.rho_star_precision);
        }
    }
    Ok(lp)
}

/// Poisson log likelihood term `y eta + y log n - n exp(eta) - log y!`.
#[inline]
pub fn poisson_cell_log_lik(y: u64, exposure: f64, eta: f64) -> f64 {
    let yf = y as f64;
    yf * eta + yf * exposure.ln() - exposure * eta.exp() - ln_factorial(y)
}

/// Poisson log likelihood summed over observed cells.
pub fn log_likelihood(state: &ApcState, table: &RegistryTable) -> Result<f64> {
    let eta = linear_predictor(state, table.dims())?;
    Ok(log_likelihood_at(&Likelihood::Poisson, &eta, table))
}

pub fn log_likelihood_at(likelihood: &Likelihood, eta: &[f64], table: &RegistryTable) -> f64 {
    let mut ll = 0.0;
    for (c, &e) in eta.iter().enumerate() {
        let Some(y) = table.deaths()[c] else { continue };
        ll += match likelihood {
            Likelihood::Poisson => poisson_cell_log_lik(y, table.exposure()[c], e),
            Likelihood::Gaussian { values, precision } => {
                let d = values[c] - e;
                0.5 * (precision / (2.0 * PI)).ln() - 0.5 * precision * d * d
            }
        };
    }
    ll
}

/// Identifiable second differences of every family and stratum.
pub fn second_differences(state: &ApcState) -> Vec<(Family, usize, Vec<f64>)> {
    let mut out = Vec::new();
    for f in Family::ALL {
        let b = state.effects(f);
        for r in 0..b.strata() {
            out.push((f, r, b.second_differences(r)));
        }
    }
    out
}
