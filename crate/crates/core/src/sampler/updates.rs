//! Single-site and block updates of the η-parameterized sampler.
//!
//! The state stores overdispersion `z`; with `eta = m + z` held fixed,
//! every effect-block draw moves `z` by the opposite amount. Given eta,
//! the intercepts and time effects have Gaussian full conditionals with
//! cell noise precision `kappa_z C_z^{-1}`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::gmrf::{
    build_kronecker_precision, build_rw2_precision, sample_constrained_gmrf, LinearConstraintSet,
    SparsePrecision, UniformCorrelation,
};
use crate::model::{
    correlated_rw2_quad_form, family_constraints, overdispersion_quad_form, rho_star_log_prior,
    ApcModelSpec, ApcState, Component, Dims, Family, Likelihood, PrecisionPrior, RegistryTable,
    Sharing,
};

/// Read-only inputs of a chain plus a clamp-event counter.
#[derive(Debug)]
pub struct UpdateContext<'a> {
    pub dims: Dims,
    pub spec: &'a ApcModelSpec,
    pub table: &'a RegistryTable,
    pub likelihood: &'a Likelihood,
    pub eta_clamp: f64,
    pub clamp_events: u64,
}

impl<'a> UpdateContext<'a> {
    pub fn new(table: &'a RegistryTable, spec: &'a ApcModelSpec, likelihood: &'a Likelihood) -> Result<Self> {
        let dims = table.dims();
        spec.validate(dims.strata)?;
        if let Likelihood::Gaussian { values, precision } = likelihood {
            if values.len() != dims.cells() {
                return Err(Error::DimensionMismatch {
                    expected: dims.cells(),
                    actual: values.len(),
                });
            }
            if !(*precision > 0.0) {
                return Err(Error::InvalidParameter("Gaussian precision must be positive".into()));
            }
        }
        Ok(Self {
            dims,
            spec,
            table,
            likelihood,
            eta_clamp: 40.0,
            clamp_events: 0,
        })
    }

    #[inline]
    fn clamped_exp(&mut self, eta: f64) -> f64 {
        if eta.abs() > self.eta_clamp {
            self.clamp_events += 1;
            eta.clamp(-self.eta_clamp, self.eta_clamp).exp()
        } else {
            eta.exp()
        }
    }
}

/// `kappa_z C_z^{-1}` as a dense R x R matrix.
fn cell_noise_precision(ctx: &UpdateContext, state: &ApcState) -> Result<DMatrix<f64>> {
    let corr = state.correlation(Component::Overdispersion, ctx.spec, ctx.dims.strata)?;
    Ok(corr.inverse() * state.hyper.precision(Component::Overdispersion))
}

/// Which block entry a cell block (i, j) loads on.
#[derive(Clone, Copy)]
enum Design {
    Intercept,
    Effects(Family),
}

impl Design {
    fn position(self, dims: Dims, i: usize, j: usize) -> usize {
        match self {
            Design::Intercept => 0,
            Design::Effects(f) => dims.position(f, i, j),
        }
    }
}

fn current_value(state: &ApcState, design: Design, t: usize, r: usize) -> f64 {
    match design {
        Design::Intercept => state.intercepts[r],
        Design::Effects(f) => state.effects(f).get(t, r),
    }
}

/// Canonical parameters `(Q, b)` of a block's full conditional plus the
/// per-cell targets `contribution + z`.
fn block_conditional(
    ctx: &UpdateContext,
    state: &ApcState,
    design: Design,
    len: usize,
    shared: bool,
    prior: Option<&SparsePrecision>,
) -> Result<(SparsePrecision, Vec<f64>)> {
    let dims = ctx.dims;
    let strata = dims.strata;
    let w = cell_noise_precision(ctx, state)?;
    let block_strata = if shared { 1 } else { strata };
    // Aggregate targets per position: S_t (R-vector) and N_t.
    let mut sums = vec![0.0; len * strata];
    let mut counts = vec![0usize; len];
    for i in 0..dims.ages {
        for j in 0..dims.periods {
            let t = design.position(dims, i, j);
            counts[t] += 1;
            for r in 0..strata {
                let c = dims.cell(i, j, r);
                sums[t * strata + r] += current_value(state, design, t, r) + state.overdispersion[c];
            }
        }
    }
    let mut q = match prior {
        Some(p) => p.clone(),
        None => SparsePrecision::zeros(len * block_strata),
    };
    q.set_structure(0, None);
    let mut b = vec![0.0; len * block_strata];
    let w_total: f64 = w.iter().sum();
    for t in 0..len {
        let n_t = counts[t] as f64;
        if counts[t] == 0 {
            continue;
        }
        let s_t = DVector::from_column_slice(&sums[t * strata..(t + 1) * strata]);
        let ws = &w * &s_t;
        if shared {
            q.add(t, t, n_t * w_total);
            b[t] += ws.sum();
        } else {
            for r in 0..strata {
                for s in r..strata {
                    q.add(r * len + t, s * len + t, n_t * w[(r, s)]);
                }
                b[r * len + t] += ws[r];
            }
        }
    }
    Ok((q, b))
}

/// Re-draws intercepts from their Gaussian full conditional (flat prior).
pub fn update_intercepts<R: Rng + ?Sized>(ctx: &mut UpdateContext, state: &mut ApcState, rng: &mut R) -> Result<()> {
    if ctx.spec.drop_intercept {
        return Ok(());
    }
    let (q, b) = block_conditional(ctx, state, Design::Intercept, 1, false, None)?;
    let new = sample_constrained_gmrf(&b, &q, &LinearConstraintSet::empty(q.dim()), rng)?;
    apply_block(ctx.dims, state, Design::Intercept, &new);
    Ok(())
}

fn apply_block(dims: Dims, state: &mut ApcState, design: Design, new: &[f64]) {
    for i in 0..dims.ages {
        for j in 0..dims.periods {
            let t = design.position(dims, i, j);
            for r in 0..dims.strata {
                let old = current_value(state, design, t, r);
                let fresh = match design {
                    Design::Intercept => new[r],
                    Design::Effects(f) => {
                        let b = state.effects(f);
                        if b.is_shared() {
                            new[t]
                        } else {
                            new[r * b.len() + t]
                        }
                    }
                };
                state.overdispersion[dims.cell(i, j, r)] += old - fresh;
            }
        }
    }
    match design {
        Design::Intercept => state.intercepts.copy_from_slice(new),
        Design::Effects(f) => state.effects_mut(f).values_mut().copy_from_slice(new),
    }
}

/// Prior precision `kappa (C^{-1} (x) P_1)` of a family block.
pub fn family_prior_precision(
    dims: Dims,
    spec: &ApcModelSpec,
    state: &ApcState,
    family: Family,
) -> Result<SparsePrecision> {
    let c = family.component();
    let rw2 = build_rw2_precision(dims.len_of(family), state.hyper.precision(c))?;
    if spec.family(family).sharing == Sharing::Shared {
        return Ok(rw2);
    }
    let corr = state.correlation(c, spec, dims.strata)?;
    build_kronecker_precision(&corr, &rw2)
}

/// Joint draw of a whole time-effect family from its Gaussian full
/// conditional under its sum-to-zero (and optional trend) constraints.
pub fn update_effect_block<R: Rng + ?Sized>(
    ctx: &mut UpdateContext,
    family: Family,
    state: &mut ApcState,
    rng: &mut R,
) -> Result<()> {
    let prior = family_prior_precision(ctx.dims, ctx.spec, state, family)?;
    let shared = ctx.spec.family(family).sharing == Sharing::Shared;
    let len = ctx.dims.len_of(family);
    let (q, b) = block_conditional(ctx, state, Design::Effects(family), len, shared, Some(&prior))?;
    let cons = family_constraints(ctx.dims, ctx.spec, family);
    let new = sample_constrained_gmrf(&b, &q, &cons, rng).map_err(|e| match e {
        Error::Numerical(msg) => Error::Numerical(format!("{} block: {msg}", family.name())),
        other => other,
    })?;
    apply_block(ctx.dims, state, Design::Effects(family), &new);
    Ok(())
}

/// Outcome of one Metropolis-Hastings step on an eta block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaUpdate {
    pub accepted: bool,
    /// `log` of the MH ratio (before `min(1, .)`); 0 for exact proposals.
    pub log_ratio: f64,
}

struct GaussianCanonical {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    mean: DVector<f64>,
    half_logdet: f64,
}

impl GaussianCanonical {
    fn new(q: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let chol = q
            .cholesky()
            .ok_or_else(|| Error::Numerical("eta proposal precision not positive definite".into()))?;
        let mean = chol.solve(&b);
        let half_logdet = chol.l().diagonal().iter().map(|d| d.ln()).sum();
        Ok(Self {
            chol,
            mean,
            half_logdet,
        })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = self
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("triangular factor has a positive diagonal");
        &self.mean + v
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let ld = self.chol.l().transpose() * d;
        self.half_logdet - 0.5 * ld.norm_squared()
    }
}

/// Second-order expansion of the block log likelihood at `eta0`, as
/// diagonal precision and linear term. Returns whether any Poisson cell
/// is observed (the only non-Gaussian case).
fn likelihood_expansion(
    ctx: &mut UpdateContext,
    i: usize,
    j: usize,
    eta0: &DVector<f64>,
) -> (Vec<f64>, Vec<f64>, bool) {
    let strata = ctx.dims.strata;
    let mut h = vec![0.0; strata];
    let mut g = vec![0.0; strata];
    let mut non_gaussian = false;
    for r in 0..strata {
        let c = ctx.dims.cell(i, j, r);
        let Some(y) = ctx.table.deaths()[c] else { continue };
        match ctx.likelihood {
            Likelihood::Poisson => {
                let mu = ctx.table.exposure()[c] * ctx.clamped_exp(eta0[r]);
                h[r] = mu;
                g[r] = (y as f64 - mu) + mu * eta0[r];
                non_gaussian = true;
            }
            Likelihood::Gaussian { values, precision } => {
                h[r] = *precision;
                g[r] = precision * values[c];
            }
        }
    }
    (h, g, non_gaussian)
}

fn block_log_likelihood(ctx: &mut UpdateContext, i: usize, j: usize, eta: &DVector<f64>) -> f64 {
    let mut ll = 0.0;
    for r in 0..ctx.dims.strata {
        let c = ctx.dims.cell(i, j, r);
        let Some(y) = ctx.table.deaths()[c] else { continue };
        ll += match ctx.likelihood {
            Likelihood::Poisson => {
                y as f64 * eta[r] - ctx.table.exposure()[c] * ctx.clamped_exp(eta[r])
            }
            Likelihood::Gaussian { values, precision } => {
                let d = values[c] - eta[r];
                -0.5 * precision * d * d
            }
        };
    }
    ll
}

fn proposal_at(
    ctx: &mut UpdateContext,
    i: usize,
    j: usize,
    at: &DVector<f64>,
    w: &DMatrix<f64>,
    wm: &DVector<f64>,
) -> Result<(GaussianCanonical, bool)> {
    let (h, g, non_gaussian) = likelihood_expansion(ctx, i, j, at);
    let mut q = w.clone();
    for r in 0..h.len() {
        q[(r, r)] += h[r];
    }
    let b = wm + DVector::from_vec(g);
    Ok((GaussianCanonical::new(q, b)?, non_gaussian))
}

/// Metropolis-Hastings update of `eta_ij` (all strata of one cell block)
/// with a Gaussian proposal from the second-order Taylor expansion of the
/// log likelihood around the current value. Unobserved strata enter only
/// through their prior conditional.
pub fn update_eta_block<R: Rng + ?Sized>(
    ctx: &mut UpdateContext,
    state: &mut ApcState,
    i: usize,
    j: usize,
    rng: &mut R,
) -> Result<EtaUpdate> {
    let dims = ctx.dims;
    let strata = dims.strata;
    let w = cell_noise_precision(ctx, state)?;
    let base = dims.cell(i, j, 0);
    let k = dims.cohort_of(i, j);
    let m = DVector::from_fn(strata, |r, _| {
        state.intercepts[r] + state.age.get(i, r) + state.period.get(j, r) + state.cohort.get(k, r)
    });
    let eta0 = &m + DVector::from_column_slice(&state.overdispersion[base..base + strata]);
    let wm = &w * &m;

    let (forward, non_gaussian) = proposal_at(ctx, i, j, &eta0, &w, &wm)?;
    let proposal = forward.draw(rng);

    let log_ratio = if non_gaussian {
        let (backward, _) = proposal_at(ctx, i, j, &proposal, &w, &wm)?;
        let prior = |x: &DVector<f64>| {
            let d = x - &m;
            -0.5 * (d.transpose() * &w * &d)[(0, 0)]
        };
        let target_new = block_log_likelihood(ctx, i, j, &proposal) + prior(&proposal);
        let target_old = block_log_likelihood(ctx, i, j, &eta0) + prior(&eta0);
        target_new - target_old + backward.log_density(&eta0) - forward.log_density(&proposal)
    } else {
        0.0
    };
    let accepted = if log_ratio >= 0.0 {
        true
    } else if log_ratio.is_nan() {
        false
    } else {
        rng.random::<f64>().ln() < log_ratio
    };
    if accepted {
        for r in 0..strata {
            state.overdispersion[base + r] = proposal[r] - m[r];
        }
    }
    Ok(EtaUpdate {
        accepted,
        log_ratio,
    })
}

/// Generalized rank and unit-precision quadratic form of a component.
pub fn precision_sufficient_statistics(
    dims: Dims,
    spec: &ApcModelSpec,
    state: &ApcState,
    component: Component,
) -> Result<(f64, f64)> {
    let corr = state.correlation(component, spec, dims.strata)?;
    Ok(match component.family() {
        Some(f) => {
            let block = state.effects(f);
            let rank = (block.strata() * (block.len() - 2)) as f64;
            (rank, correlated_rw2_quad_form(block, &corr))
        }
        None => (
            dims.cells() as f64,
            overdispersion_quad_form(&state.overdispersion, dims, &corr),
        ),
    })
}

/// Gamma full conditional `(shape, rate)` of a precision, or `None` when
/// the precision is fixed.
pub fn precision_full_conditional(
    dims: Dims,
    spec: &ApcModelSpec,
    state: &ApcState,
    component: Component,
) -> Result<Option<(f64, f64)>> {
    match spec.component(component).precision {
        PrecisionPrior::Fixed(_) => Ok(None),
        PrecisionPrior::Gamma { shape, rate } => {
            let (rank, qf) = precision_sufficient_statistics(dims, spec, state, component)?;
            Ok(Some((shape + 0.5 * rank, rate + 0.5 * qf)))
        }
    }
}

/// Gibbs draw of a precision from its Gamma full conditional.
pub fn update_precision<R: Rng + ?Sized>(
    ctx: &UpdateContext,
    component: Component,
    state: &mut ApcState,
    rng: &mut R,
) -> Result<()> {
    let Some((shape, rate)) = precision_full_conditional(ctx.dims, ctx.spec, state, component)? else {
        return Ok(());
    };
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(format!("{} precision: {e}", component.name())))?;
    let mut kappa = gamma.sample(rng);
    // A subnormal draw would break the next factorization.
    if kappa < f64::MIN_POSITIVE {
        kappa = f64::MIN_POSITIVE;
    }
    state.hyper.precision[component.index()] = kappa;
    Ok(())
}

/// Log full conditional of `rho*` for a correlated component, up to a
/// constant: Gaussian prior plus the correlation-dependent part of the
/// component's prior density.
pub fn correlation_log_target(
    dims: Dims,
    spec: &ApcModelSpec,
    state: &ApcState,
    component: Component,
    rho_star: f64,
) -> Result<f64> {
    let corr = UniformCorrelation::from_fisher_z(dims.strata, rho_star)?;
    let kappa = state.hyper.precision(component);
    let (exponent, qf) = match component.family() {
        Some(f) => {
            let block = state.effects(f);
            ((block.len() - 2) as f64, correlated_rw2_quad_form(block, &corr))
        }
        None => (
            dims.blocks() as f64,
            overdispersion_quad_form(&state.overdispersion, dims, &corr),
        ),
    };
    Ok(rho_star_log_prior(rho_star, spec.component(component).rho_star_precision)
        - 0.5 * exponent * corr.log_det()
        - 0.5 * kappa * qf)
}

/// Random-walk Metropolis step on `rho*` with scale `step`.
pub fn update_correlation<R: Rng + ?Sized>(
    ctx: &UpdateContext,
    component: Component,
    state: &mut ApcState,
    step: f64,
    rng: &mut R,
) -> Result<bool> {
    if !ctx.spec.component(component).updates_correlation(ctx.dims.strata) {
        return Ok(false);
    }
    let current = state.hyper.rho_star(component);
    let proposal = current + step * rng.sample::<f64, _>(StandardNormal);
    let log_ratio = correlation_log_target(ctx.dims, ctx.spec, state, component, proposal)?
        - correlation_log_target(ctx.dims, ctx.spec, state, component, current)?;
    let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accept {
        state.hyper.rho_star[component.index()] = proposal;
    }
    Ok(accept)
}
