use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::model::{linear_predictor, RegistryTable};
use crate::sampler::PosteriorSamples;

/// Draws beyond this are thinned to a stratified subsample before the
/// mixture CDF is inverted.
pub const MAX_MIXTURE_DRAWS: usize = 20_000;

/// Predictive distribution of one cell's count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPrediction {
    pub age: usize,
    pub period: usize,
    pub stratum: usize,
    pub exposure: f64,
    /// `E(lambda)` over the posterior.
    pub rate_mean: f64,
    /// `Var(lambda)` over the posterior.
    pub rate_var: f64,
    /// Predictive count mean `mu`.
    pub mean: f64,
    /// Predictive count standard deviation `sigma`.
    pub sd: f64,
    /// Count quantiles at [`PredictiveSummary::probabilities`].
    pub count_quantiles: Vec<f64>,
}

impl CellPrediction {
    pub fn rate_quantiles(&self) -> Vec<f64> {
        self.count_quantiles.iter().map(|q| q / self.exposure).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub model: String,
    /// Quantile probabilities, increasing.
    pub probabilities: Vec<f64>,
    pub cells: Vec<CellPrediction>,
}

impl PredictiveSummary {
    /// Equal-tailed `level` interval `(lower, upper)` of each cell.
    pub fn intervals(&self, level: f64) -> Result<Vec<(f64, f64)>> {
        let lo = self.probability_index(tidy((1.0 - level) / 2.0))?;
        let hi = self.probability_index(tidy((1.0 + level) / 2.0))?;
        Ok(self
            .cells
            .iter()
            .map(|c| (c.count_quantiles[lo], c.count_quantiles[hi]))
            .collect())
    }

    fn probability_index(&self, p: f64) -> Result<usize> {
        self.probabilities
            .iter()
            .position(|q| (q - p).abs() < 1e-12)
            .ok_or_else(|| Error::InvalidParameter(format!("quantile {p} was not computed")))
    }
}

/// Rounds away representation noise such as `(1 - 0.95) / 2`.
fn tidy(p: f64) -> f64 {
    (p * 1e12).round() / 1e12
}

/// Quantile probabilities for equal-tailed intervals at `levels`, plus the
/// median.
pub fn interval_probabilities(levels: &[f64]) -> Result<Vec<f64>> {
    let mut probs = vec![0.5];
    for &l in levels {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::InvalidParameter(format!("interval level {l} outside (0, 1)")));
        }
        probs.push(tidy((1.0 - l) / 2.0));
        probs.push(tidy((1.0 + l) / 2.0));
    }
    probs.sort_by(f64::total_cmp);
    probs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(probs)
}

/// `mu = n E(lambda)` and `sigma^2 = phi n E(lambda) + n^2 Var(lambda)`
/// (law of iterated expectations and total variance; `phi = 1` is
/// Poisson). Returns `(E lambda, Var lambda, mu, sigma^2)`.
pub fn mixture_moments(rate_draws: &[f64], exposure: f64, phi: f64) -> Result<(f64, f64, f64, f64)> {
    if rate_draws.is_empty() {
        return Err(Error::Empty("no posterior draws".into()));
    }
    let s = rate_draws.len() as f64;
    let mean = rate_draws.iter().sum::<f64>() / s;
    let var = rate_draws.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / s;
    let mu = exposure * mean;
    Ok((mean, var, mu, phi * mu + exposure * exposure * var))
}

/// `P(Y <= y)` for `Y ~ Poisson(mean)`.
fn poisson_cdf(y: f64, mean: f64) -> f64 {
    if y < 0.0 {
        0.0
    } else {
        gamma_ur(y + 1.0, mean)
    }
}

/// Evenly spaced order statistics of the draws.
fn stratified(draws: &[f64], target: usize) -> Vec<f64> {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let s = sorted.len() as f64;
    (0..target)
        .map(|k| sorted[(((k as f64 + 0.5) * s / target as f64) as usize).min(sorted.len() - 1)])
        .collect()
}

/// Quantiles of the Poisson mixture `(1/S) sum_s Poisson(n lambda_s)` by
/// bisection on the exact mixture CDF: the smallest `y` with
/// `F(y) >= p`.
pub fn mixture_count_quantiles(rate_draws: &[f64], exposure: f64, probabilities: &[f64]) -> Result<Vec<f64>> {
    if rate_draws.is_empty() {
        return Err(Error::Empty("no posterior draws".into()));
    }
    for &p in probabilities {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("quantile level {p} outside (0, 1)")));
        }
    }
    let thinned;
    let draws = if rate_draws.len() > MAX_MIXTURE_DRAWS {
        thinned = stratified(rate_draws, MAX_MIXTURE_DRAWS);
        &thinned[..]
    } else {
        rate_draws
    };
    let means: Vec<f64> = draws.iter().map(|l| exposure * l).collect();
    let cdf = |y: f64| means.iter().map(|&m| poisson_cdf(y, m)).sum::<f64>() / means.len() as f64;
    let max_mean = means.iter().copied().fold(0.0, f64::max);
    let mut out = Vec::with_capacity(probabilities.len());
    for &p in probabilities {
        let mut hi = (max_mean + 10.0 * max_mean.sqrt() + 10.0).ceil();
        while cdf(hi) < p {
            hi *= 2.0;
        }
        let mut lo = -1.0; // F(lo) < p
        while hi - lo > 1.0 {
            let mid = ((lo + hi) / 2.0).floor();
            if cdf(mid) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out.push(hi);
    }
    Ok(out)
}

/// Posterior draws of `lambda = exp(eta)` at each requested cell.
pub fn rate_draws(samples: &PosteriorSamples, cells: &[usize]) -> Result<Vec<Vec<f64>>> {
    if samples.draw_count() == 0 {
        return Err(Error::Empty("posterior has no retained draws".into()));
    }
    let mut out = vec![Vec::with_capacity(samples.draw_count()); cells.len()];
    for state in samples.draws() {
        let eta = linear_predictor(state, samples.dims)?;
        for (k, &c) in cells.iter().enumerate() {
            out[k].push(eta[c].exp());
        }
    }
    Ok(out)
}

fn cell_coords(table: &RegistryTable, cell: usize) -> (usize, usize, usize) {
    let d = table.dims();
    let r = cell % d.strata;
    let block = cell / d.strata;
    (block / d.periods, block % d.periods, r)
}

/// Moments only; quantile vectors are left empty.
pub fn predictive_moments(samples: &PosteriorSamples, table: &RegistryTable, cells: &[usize]) -> Result<PredictiveSummary> {
    summarize(samples, table, cells, &[], "apc")
}

/// Moments and count quantiles at `probabilities`.
pub fn predictive_quantiles(
    samples: &PosteriorSamples,
    table: &RegistryTable,
    cells: &[usize],
    probabilities: &[f64],
) -> Result<PredictiveSummary> {
    summarize(samples, table, cells, probabilities, "apc")
}

/// Full predictive summary with equal-tailed intervals at `levels`.
pub fn predictive_summary(
    samples: &PosteriorSamples,
    table: &RegistryTable,
    cells: &[usize],
    levels: &[f64],
    model: &str,
) -> Result<PredictiveSummary> {
    summarize(samples, table, cells, &interval_probabilities(levels)?, model)
}

fn summarize(
    samples: &PosteriorSamples,
    table: &RegistryTable,
    cells: &[usize],
    probabilities: &[f64],
    model: &str,
) -> Result<PredictiveSummary> {
    let draws = rate_draws(samples, cells)?;
    let preds = cells
        .iter()
        .zip(&draws)
        .map(|(&c, d)| summarize_cell(table, c, d, 1.0, probabilities))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictiveSummary {
        model: model.to_string(),
        probabilities: probabilities.to_vec(),
        cells: preds,
    })
}

fn summarize_cell(
    table: &RegistryTable,
    cell: usize,
    rate_draws: &[f64],
    phi: f64,
    probabilities: &[f64],
) -> Result<CellPrediction> {
    let exposure = table.exposure()[cell];
    let (rate_mean, rate_var, mean, var) = mixture_moments(rate_draws, exposure, phi)?;
    let count_quantiles = if probabilities.is_empty() {
        Vec::new()
    } else {
        mixture_count_quantiles(rate_draws, exposure, probabilities)?
    };
    let (age, period, stratum) = cell_coords(table, cell);
    Ok(CellPrediction {
        age,
        period,
        stratum,
        exposure,
        rate_mean,
        rate_var,
        mean,
        sd: var.sqrt(),
        count_quantiles,
    })
}
