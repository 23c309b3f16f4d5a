//! Posterior predictive distributions, relative risks and cross-prediction.
//!
//! Masked cells need no special treatment during fitting: their effects
//! and overdispersion stay in the state and are drawn from prior-driven
//! full conditionals. Prediction compounds each posterior rate draw with
//! Poisson variation.

mod crosspred;
mod predictive;
mod relative;

pub use crosspred::{
    run_cross_prediction, scenario_cells, score_summary, CrossPredictionPlan, ModelVariant, Scenario,
    ScenarioResult, Window,
};
pub use predictive::{
    interval_probabilities, mixture_count_quantiles, mixture_moments, predictive_moments,
    predictive_quantiles, predictive_summary, rate_draws, CellPrediction, PredictiveSummary,
    MAX_MIXTURE_DRAWS,
};
pub use relative::{log_relative_risk, relative_risks, RelativeRiskAverage, RelativeRiskBand};
