use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    linear_predictor, log_likelihood_at, log_prior, ApcModelSpec, ApcState, Component, Dims,
    Family, Likelihood, PrecisionPrior, RegistryTable,
};

use super::config::SamplerConfig;
use super::diagnostics::{effective_sample_size, split_potential_scale_reduction};
use super::updates::{
    update_correlation, update_effect_block, update_eta_block, update_intercepts,
    update_precision, UpdateContext,
};

/// Accepted / proposed counts of one Metropolis-Hastings update type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCounter {
    pub accepted: u64,
    pub proposed: u64,
}

impl AcceptanceCounter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Post-burn-in acceptance statistics of one chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub eta: AcceptanceCounter,
    /// Indexed by [`Component`].
    pub correlation: [AcceptanceCounter; 4],
    /// Random-walk scales on rho* after burn-in adaptation.
    pub step_sizes: [f64; 4],
    /// Evaluations of `exp(eta)` that hit the clamp.
    pub clamp_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub chain: usize,
    pub draws: Vec<ApcState>,
    pub stats: ChainStats,
}

/// Convergence summary of one scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostic {
    pub name: String,
    pub ess: f64,
    pub psrf: f64,
}

/// Thinned post-burn-in draws of every chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub dims: Dims,
    pub spec: ApcModelSpec,
    pub config: SamplerConfig,
    pub chains: Vec<ChainOutput>,
    /// ESS and split R-hat of every free hyperparameter.
    pub diagnostics: Vec<ParameterDiagnostic>,
}

impl PosteriorSamples {
    pub fn draw_count(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn draws(&self) -> impl Iterator<Item = &ApcState> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    /// Per-chain traces of a scalar functional.
    pub fn traces<F: Fn(&ApcState) -> f64>(&self, f: F) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.draws.iter().map(&f).collect())
            .collect()
    }

    /// Pooled post-burn-in acceptance rate of the rho* updates of `c`.
    pub fn correlation_acceptance(&self, c: Component) -> f64 {
        let mut total = AcceptanceCounter::default();
        for ch in &self.chains {
            total.accepted += ch.stats.correlation[c.index()].accepted;
            total.proposed += ch.stats.correlation[c.index()].proposed;
        }
        total.rate()
    }

    pub fn eta_acceptance(&self) -> f64 {
        let mut total = AcceptanceCounter::default();
        for ch in &self.chains {
            total.accepted += ch.stats.eta.accepted;
            total.proposed += ch.stats.eta.proposed;
        }
        total.rate()
    }

    pub fn diagnostic(&self, name: &str) -> Option<&ParameterDiagnostic> {
        self.diagnostics.iter().find(|d| d.name == name)
    }
}

/// Name and extractor of every free hyperparameter.
pub fn hyperparameter_functionals(
    spec: &ApcModelSpec,
    strata: usize,
) -> Vec<(String, Box<dyn Fn(&ApcState) -> f64 + Send + Sync>)> {
    let mut out: Vec<(String, Box<dyn Fn(&ApcState) -> f64 + Send + Sync>)> = Vec::new();
    for c in Component::ALL {
        let fs = spec.component(c);
        if let PrecisionPrior::Gamma { .. } = fs.precision {
            let idx = c.index();
            out.push((
                format!("kappa_{}", c.name()),
                Box::new(move |s: &ApcState| s.hyper.precision[idx]),
            ));
        }
        if fs.updates_correlation(strata) {
            let idx = c.index();
            out.push((
                format!("rho_{}", c.name()),
                Box::new(move |s: &ApcState| {
                    crate::gmrf::UniformCorrelation::from_fisher_z(strata, s.hyper.rho_star[idx])
                        .map(|c| c.rho())
                        .unwrap_or(f64::NAN)
                }),
            ));
        }
    }
    out
}

fn initial_state<R: Rng + ?Sized>(
    table: &RegistryTable,
    spec: &ApcModelSpec,
    likelihood: &Likelihood,
    rng: &mut R,
) -> ApcState {
    let dims = table.dims();
    let mut state = ApcState::zeros(dims, spec);
    let observed_log_rate = |c: usize| -> Option<f64> {
        let y = table.deaths()[c]?;
        Some(match likelihood {
            Likelihood::Poisson => ((y as f64 + 0.5) / table.exposure()[c]).ln(),
            Likelihood::Gaussian { values, .. } => values[c],
        })
    };
    for r in 0..dims.strata {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..dims.ages {
            for j in 0..dims.periods {
                if let Some(v) = observed_log_rate(dims.cell(i, j, r)) {
                    sum += v;
                    count += 1;
                }
            }
        }
        let level = if count > 0 { sum / count as f64 } else { 0.0 };
        if !spec.drop_intercept {
            state.intercepts[r] = level;
        }
        for i in 0..dims.ages {
            for j in 0..dims.periods {
                let c = dims.cell(i, j, r);
                let start = if spec.drop_intercept { 0.0 } else { level };
                state.overdispersion[c] = observed_log_rate(c).map_or(
                    if spec.drop_intercept { level } else { 0.0 },
                    |v| v - start,
                );
            }
        }
    }
    // Overdispersed hyperparameter starts so chains can be compared.
    for c in Component::ALL {
        let fs = spec.component(c);
        if let PrecisionPrior::Gamma { .. } = fs.precision {
            let centre: f64 = if c == Component::Overdispersion { 50.0 } else { 100.0 };
            let jitter: f64 = rng.sample(StandardNormal);
            state.hyper.precision[c.index()] = centre * (0.5 * jitter).exp();
        }
        if fs.updates_correlation(dims.strata) {
            let jitter: f64 = rng.sample(StandardNormal);
            state.hyper.rho_star[c.index()] = 0.5 * jitter;
        }
    }
    state
}

fn log_posterior(state: &ApcState, spec: &ApcModelSpec, table: &RegistryTable, likelihood: &Likelihood) -> f64 {
    let dims = table.dims();
    let Ok(eta) = linear_predictor(state, dims) else {
        return f64::NAN;
    };
    match log_prior(state, spec, dims) {
        Ok(lp) => lp + log_likelihood_at(likelihood, &eta, table),
        Err(_) => f64::NAN,
    }
}

/// Robbins-Monro adaptation of the random-walk scale during burn-in.
fn adapt_step(step: f64, accepted: bool, target: f64, round: usize) -> f64 {
    let gain = (round as f64 + 1.0).powf(-0.6);
    let delta = if accepted { 1.0 - target } else { -target };
    (step.ln() + gain * delta).exp().clamp(1e-4, 50.0)
}

/// RNG of chain `chain` under `seed`: one ChaCha stream per chain.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn run_single_chain(
    table: &RegistryTable,
    spec: &ApcModelSpec,
    likelihood: &Likelihood,
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let dims = table.dims();
    let mut rng = chain_rng(config.seed, chain);
    let mut ctx = UpdateContext::new(table, spec, likelihood)?;
    ctx.eta_clamp = config.eta_clamp;
    let mut state = initial_state(table, spec, likelihood, &mut rng);
    let mut last_valid = state.clone();
    let mut stats = ChainStats {
        step_sizes: [config.initial_step; 4],
        ..ChainStats::default()
    };
    let mut adapt_rounds = [0usize; 4];
    let mut draws = Vec::with_capacity(config.retained_per_chain());
    let abort = |iteration: usize, reason: String| Error::SamplerAborted {
        chain,
        iteration,
        reason,
    };

    for iter in 1..=config.iterations {
        let burning = iter <= config.burn_in;
        let sweep: Result<()> = (|| {
            update_intercepts(&mut ctx, &mut state, &mut rng)?;
            for f in Family::ALL {
                update_effect_block(&mut ctx, f, &mut state, &mut rng)?;
            }
            for i in 0..dims.ages {
                for j in 0..dims.periods {
                    let u = update_eta_block(&mut ctx, &mut state, i, j, &mut rng)?;
                    if !burning {
                        stats.eta.record(u.accepted);
                    }
                }
            }
            for c in Component::ALL {
                update_precision(&ctx, c, &mut state, &mut rng)?;
            }
            for c in Component::ALL {
                if !spec.component(c).updates_correlation(dims.strata) {
                    continue;
                }
                let k = c.index();
                let accepted = update_correlation(&ctx, c, &mut state, stats.step_sizes[k], &mut rng)?;
                if burning {
                    stats.step_sizes[k] =
                        adapt_step(stats.step_sizes[k], accepted, config.target_acceptance, adapt_rounds[k]);
                    adapt_rounds[k] += 1;
                } else {
                    stats.correlation[k].record(accepted);
                }
            }
            Ok(())
        })();
        if let Err(e) = sweep {
            log::error!("chain={chain} iter={iter} aborted last_state={last_valid:?}");
            return Err(abort(iter, e.to_string()));
        }
        let lp = log_posterior(&state, spec, table, likelihood);
        if !lp.is_finite() {
            log::error!("chain={chain} iter={iter} non-finite log posterior; last_state={last_valid:?}");
            return Err(abort(iter, format!("non-finite log posterior ({lp})")));
        }
        last_valid.clone_from(&state);
        if !burning && (iter - config.burn_in) % config.thinning == 0 {
            draws.push(state.clone());
        }
        if config.log_every > 0 && iter % config.log_every == 0 {
            log::info!(
                "chain={chain} iter={iter} log_post={lp:.4} eta_acc={:.3} clamp_events={}",
                stats.eta.rate(),
                ctx.clamp_events
            );
        }
    }
    stats.clamp_events = ctx.clamp_events;
    Ok(ChainOutput { chain, draws, stats })
}

/// Runs `config.chains` independent chains in parallel under a Poisson
/// likelihood.
pub fn run_chain(table: &RegistryTable, spec: &ApcModelSpec, config: &SamplerConfig) -> Result<PosteriorSamples> {
    run_chain_with(table, spec, &Likelihood::Poisson, config)
}

/// [`run_chain`] with an explicit observation model.
pub fn run_chain_with(
    table: &RegistryTable,
    spec: &ApcModelSpec,
    likelihood: &Likelihood,
    config: &SamplerConfig,
) -> Result<PosteriorSamples> {
    config.validate()?;
    spec.validate(table.dims().strata)?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|chain| run_single_chain(table, spec, likelihood, config, chain))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = PosteriorSamples {
        dims: table.dims(),
        spec: *spec,
        config: config.clone(),
        chains,
        diagnostics: Vec::new(),
    };
    samples.diagnostics = hyperparameter_functionals(spec, table.dims().strata)
        .into_iter()
        .map(|(name, f)| {
            let traces = samples.traces(&f);
            ParameterDiagnostic {
                name,
                ess: effective_sample_size(&traces),
                psrf: split_potential_scale_reduction(&traces),
            }
        })
        .collect();
    for d in &samples.diagnostics {
        log::info!("param={} ess={:.1} psrf={:.4}", d.name, d.ess, d.psrf);
    }
    Ok(samples)
}
