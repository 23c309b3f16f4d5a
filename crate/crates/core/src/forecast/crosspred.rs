use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leecarter::{
    extrapolate_kappa, fit_lee_carter, lee_carter_predictive, Direction, KappaForecast, LeeCarterCell,
    LeeCarterOptions,
};
use crate::model::{ApcModelSpec, RegistryTable};
use crate::sampler::{run_chain, SamplerConfig};
use crate::scoring::{score_forecast, ForecastCell, ScoreReport};

use super::predictive::{predictive_summary, PredictiveSummary};

/// Held-out period window of one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    /// Periods `0..J/2`, projected backward.
    FirstHalf,
    /// Periods `J/2..J`, projected forward.
    SecondHalf,
    /// Nothing masked: every period is scored in-sample.
    None,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Window::FirstHalf => "first-half",
            Window::SecondHalf => "second-half",
            Window::None => "in-sample",
        }
    }

    /// Masked periods in forecast order: outward from the mask boundary.
    pub fn forecast_order(self, periods: usize) -> Vec<usize> {
        let half = periods / 2;
        match self {
            Window::FirstHalf => (0..half).rev().collect(),
            Window::SecondHalf => (half..periods).collect(),
            Window::None => (0..periods).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub stratum: usize,
    pub window: Window,
}

impl Scenario {
    pub fn label(&self) -> String {
        format!("stratum{}-{}", self.stratum + 1, self.window.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPredictionPlan {
    pub scenarios: Vec<Scenario>,
    pub levels: Vec<f64>,
    /// Predictive simulations per Lee-Carter cell.
    pub lee_carter_draws: usize,
}

impl CrossPredictionPlan {
    /// Both halves of every stratum.
    pub fn full(strata: usize, levels: Vec<f64>) -> Self {
        let scenarios = [Window::FirstHalf, Window::SecondHalf]
            .into_iter()
            .flat_map(|window| (0..strata).map(move |stratum| Scenario { stratum, window }))
            .collect();
        Self {
            scenarios,
            levels,
            lee_carter_draws: 10_000,
        }
    }

    pub fn validate(&self, table: &RegistryTable) -> Result<()> {
        let d = table.dims();
        if self.scenarios.is_empty() {
            return Err(Error::Empty("cross-prediction plan has no scenarios".into()));
        }
        if d.periods < 2 {
            return Err(Error::InsufficientData("at least two periods needed to split windows".into()));
        }
        for s in &self.scenarios {
            if s.stratum >= d.strata {
                return Err(Error::OutOfRange(format!("stratum {} of {}", s.stratum, d.strata)));
            }
            for c in scenario_cells(table, s) {
                if !table.is_observed(c) {
                    return Err(Error::InsufficientData(format!(
                        "{}: held-out cell {c} has no observed truth",
                        s.label()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A model compared in the cross-prediction experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelVariant {
    Apc { name: String, spec: ApcModelSpec },
    LeeCarter { name: String, options: LeeCarterOptions },
}

impl ModelVariant {
    pub fn name(&self) -> &str {
        match self {
            ModelVariant::Apc { name, .. } | ModelVariant::LeeCarter { name, .. } => name,
        }
    }

    /// The usual comparison: independent APC, correlated APC and Lee-Carter.
    pub fn standard_set() -> Vec<Self> {
        vec![
            ModelVariant::Apc {
                name: "apc".into(),
                spec: ApcModelSpec::independent(),
            },
            ModelVariant::Apc {
                name: "cmapc".into(),
                spec: ApcModelSpec::correlated(),
            },
            ModelVariant::LeeCarter {
                name: "lee-carter".into(),
                options: LeeCarterOptions::default(),
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub summary: PredictiveSummary,
    pub report: ScoreReport,
}

/// Cells of the scenario's stratum in its window, age-major.
pub fn scenario_cells(table: &RegistryTable, scenario: &Scenario) -> Vec<usize> {
    let d = table.dims();
    let mut periods = scenario.window.forecast_order(d.periods);
    periods.sort_unstable();
    let mut out = Vec::new();
    for i in 0..d.ages {
        for &j in &periods {
            out.push(d.cell(i, j, scenario.stratum));
        }
    }
    out
}

/// Scores a predictive summary against the observed counts of `truth`.
pub fn score_summary(
    summary: &PredictiveSummary,
    truth: &RegistryTable,
    levels: &[f64],
    period_order: &[usize],
) -> Result<ScoreReport> {
    let d = truth.dims();
    let intervals = levels
        .iter()
        .map(|&l| summary.intervals(l))
        .collect::<Result<Vec<_>>>()?;
    let cells = summary
        .cells
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let observed = truth.deaths()[d.cell(c.age, c.period, c.stratum)]
                .ok_or_else(|| Error::InsufficientData(format!("no truth for cell ({}, {}, {})", c.age, c.period, c.stratum)))?;
            Ok(ForecastCell {
                age: c.age,
                period: c.period,
                stratum: c.stratum,
                observed: observed as f64,
                mean: c.mean,
                sd: c.sd,
                intervals: intervals.iter().map(|iv| iv[k]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    score_forecast(&summary.model, &cells, levels, period_order)
}

/// Seed of scenario `index`, derived from the sampler seed.
fn scenario_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn run_apc(
    table: &RegistryTable,
    spec: &ApcModelSpec,
    config: &SamplerConfig,
    scenario: &Scenario,
    index: usize,
    levels: &[f64],
    name: &str,
) -> Result<PredictiveSummary> {
    let cells = scenario_cells(table, scenario);
    let masked = table.masked(if scenario.window == Window::None { Vec::new() } else { cells.clone() });
    let cfg = SamplerConfig {
        seed: scenario_seed(config.seed, index),
        ..config.clone()
    };
    let samples = run_chain(&masked, spec, &cfg)?;
    predictive_summary(&samples, table, &cells, levels, name)
}

fn run_lee_carter(
    table: &RegistryTable,
    options: &LeeCarterOptions,
    seed: u64,
    scenario: &Scenario,
    index: usize,
    plan: &CrossPredictionPlan,
    name: &str,
) -> Result<PredictiveSummary> {
    let d = table.dims();
    let half = d.periods / 2;
    let fitted: Vec<usize> = match scenario.window {
        Window::FirstHalf => (half..d.periods).collect(),
        Window::SecondHalf => (0..half).collect(),
        Window::None => (0..d.periods).collect(),
    };
    let mut deaths = Vec::with_capacity(d.ages * fitted.len());
    let mut exposure = Vec::with_capacity(d.ages * fitted.len());
    for i in 0..d.ages {
        for &j in &fitted {
            let c = d.cell(i, j, scenario.stratum);
            let y = table.deaths()[c].ok_or_else(|| {
                Error::InsufficientData(format!("Lee-Carter needs observed training cell ({i}, {j})"))
            })?;
            deaths.push(y as f64);
            exposure.push(table.exposure()[c]);
        }
    }
    let fit = fit_lee_carter(&deaths, &exposure, d.ages, fitted.len(), options)?;
    let targets = scenario.window.forecast_order(d.periods);
    let kappa_of = |j: usize| -> Result<KappaForecast> {
        Ok(match scenario.window {
            Window::FirstHalf => extrapolate_kappa(&fit, half - j, Direction::Backward, options)?[half - j - 1],
            Window::SecondHalf => extrapolate_kappa(&fit, j + 1 - half, Direction::Forward, options)?[j - half],
            Window::None => KappaForecast {
                horizon: 0,
                mean: fit.kappa[j],
                var: 0.0,
            },
        })
    };
    let mut periods = targets.clone();
    periods.sort_unstable();
    let mut cells = Vec::with_capacity(d.ages * periods.len());
    for i in 0..d.ages {
        for &j in &periods {
            cells.push(LeeCarterCell {
                age: i,
                period: j,
                stratum: scenario.stratum,
                exposure: table.exposure()[d.cell(i, j, scenario.stratum)],
                kappa: kappa_of(j)?,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed(seed, index));
    let mut summary = lee_carter_predictive(&fit, &cells, &plan.levels, plan.lee_carter_draws, &mut rng)?;
    summary.model = name.to_string();
    Ok(summary)
}

/// Masks each scenario's block, refits every model on the rest and scores
/// the held-out predictions. Results are ordered scenario-major, then by
/// model.
pub fn run_cross_prediction(
    table: &RegistryTable,
    models: &[ModelVariant],
    config: &SamplerConfig,
    plan: &CrossPredictionPlan,
) -> Result<Vec<ScenarioResult>> {
    plan.validate(table)?;
    if models.is_empty() {
        return Err(Error::Empty("no models to compare".into()));
    }
    let mut out = Vec::with_capacity(plan.scenarios.len() * models.len());
    for (index, scenario) in plan.scenarios.iter().enumerate() {
        for model in models {
            log::info!("scenario={} model={}", scenario.label(), model.name());
            let summary = match model {
                ModelVariant::Apc { name, spec } => {
                    run_apc(table, spec, config, scenario, index, &plan.levels, name)?
                }
                ModelVariant::LeeCarter { name, options } => {
                    run_lee_carter(table, options, config.seed, scenario, index, plan, name)?
                }
            };
            let order = scenario.window.forecast_order(table.dims().periods);
            let report = score_summary(&summary, table, &plan.levels, &order)?;
            log::info!(
                "scenario={} model={} mean_dss={:.4} mse={:.4}",
                scenario.label(),
                model.name(),
                report.mean_dss,
                report.mse
            );
            out.push(ScenarioResult {
                scenario: *scenario,
                summary,
                report,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forecast_order_runs_outward() {
        assert_eq!(Window::FirstHalf.forecast_order(6), vec![2, 1, 0]);
        assert_eq!(Window::SecondHalf.forecast_order(6), vec![3, 4, 5]);
        assert_eq!(Window::None.forecast_order(3), vec![0, 1, 2]);
    }

    #[test]
    fn full_plan_has_two_windows_per_stratum() {
        let plan = CrossPredictionPlan::full(3, vec![0.95]);
        assert_eq!(plan.scenarios.len(), 6);
    }
}
