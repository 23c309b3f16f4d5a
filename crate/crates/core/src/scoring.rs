//! Proper scoring of probabilistic count forecasts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dawid-Sebastiani score `((y - mu) / sigma)^2 + 2 log sigma`.
pub fn dss(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("predictive sd must be positive, got {sigma}")));
    }
    let z = (y - mu) / sigma;
    Ok(z * z + 2.0 * sigma.ln())
}

pub fn mse(observations: &[f64], means: &[f64]) -> Result<f64> {
    aligned(observations.len(), means.len())?;
    if observations.is_empty() {
        return Err(Error::Empty("no cells to score".into()));
    }
    Ok(observations.iter().zip(means).map(|(y, m)| (y - m) * (y - m)).sum::<f64>() / observations.len() as f64)
}

/// Fraction of cells with `lower <= y <= upper`.
pub fn empirical_coverage(observations: &[f64], intervals: &[(f64, f64)]) -> Result<f64> {
    aligned(observations.len(), intervals.len())?;
    if observations.is_empty() {
        return Err(Error::Empty("no cells to score".into()));
    }
    if let Some(k) = intervals.iter().position(|(lo, hi)| lo > hi) {
        return Err(Error::InvalidParameter(format!("interval {k} has lower > upper")));
    }
    let hits = observations
        .iter()
        .zip(intervals)
        .filter(|(y, (lo, hi))| lo <= *y && *y <= hi)
        .count();
    Ok(hits as f64 / observations.len() as f64)
}

/// Per-period means over ages of a DSS grid (`grid[p][i]`, periods in
/// forecast order) and their running average. The running average is
/// accumulated cell by cell so its last value is bitwise the grand mean.
pub fn cumulative_mean_dss(grid: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let width = grid.first().map(Vec::len).ok_or_else(|| Error::Empty("empty DSS grid".into()))?;
    if width == 0 || grid.iter().any(|row| row.len() != width) {
        return Err(Error::InvalidDimension("ragged DSS grid".into()));
    }
    let per_period: Vec<f64> = grid.iter().map(|row| row.iter().sum::<f64>() / width as f64).collect();
    let mut running = 0.0;
    let curve = grid
        .iter()
        .enumerate()
        .map(|(p, row)| {
            running = row.iter().fold(running, |acc, v| acc + v);
            running / ((p + 1) * width) as f64
        })
        .collect();
    Ok((per_period, curve))
}

fn aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, actual: b });
    }
    Ok(())
}

/// A scored forecast cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCell {
    pub age: usize,
    pub period: usize,
    pub stratum: usize,
    pub observed: f64,
    pub mean: f64,
    pub sd: f64,
    pub dss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model: String,
    pub cells: Vec<ScoredCell>,
    pub mean_dss: f64,
    pub mse: f64,
    /// `(level, coverage)` pairs.
    pub coverage: Vec<(f64, f64)>,
    /// Periods in forecast order.
    pub period_order: Vec<usize>,
    pub period_mean_dss: Vec<f64>,
    pub cumulative_dss: Vec<f64>,
}

/// Input to [`score_forecast`]: one entry per predicted cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCell {
    pub age: usize,
    pub period: usize,
    pub stratum: usize,
    pub observed: f64,
    pub mean: f64,
    pub sd: f64,
    /// `(lower, upper)` per requested level.
    pub intervals: Vec<(f64, f64)>,
}

/// Scores forecast cells. `period_order` lists the forecast periods in
/// horizon order (outward from the mask boundary); cells whose period is
/// missing from it are rejected.
pub fn score_forecast(model: &str, cells: &[ForecastCell], levels: &[f64], period_order: &[usize]) -> Result<ScoreReport> {
    if cells.is_empty() {
        return Err(Error::Empty("no cells to score".into()));
    }
    let scored = cells
        .iter()
        .map(|c| {
            Ok(ScoredCell {
                age: c.age,
                period: c.period,
                stratum: c.stratum,
                observed: c.observed,
                mean: c.mean,
                sd: c.sd,
                dss: dss(c.observed, c.mean, c.sd)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<f64> = cells.iter().map(|c| c.observed).collect();
    let mus: Vec<f64> = cells.iter().map(|c| c.mean).collect();
    let mut coverage = Vec::with_capacity(levels.len());
    for (k, &level) in levels.iter().enumerate() {
        let iv = cells
            .iter()
            .map(|c| {
                c.intervals
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::DimensionMismatch { expected: levels.len(), actual: c.intervals.len() })
            })
            .collect::<Result<Vec<_>>>()?;
        coverage.push((level, empirical_coverage(&ys, &iv)?));
    }
    let mut grid = vec![Vec::new(); period_order.len()];
    for c in &scored {
        let p = period_order
            .iter()
            .position(|&q| q == c.period)
            .ok_or_else(|| Error::InvalidParameter(format!("period {} not in forecast order", c.period)))?;
        grid[p].push(c.dss);
    }
    grid.retain(|row| !row.is_empty());
    let order: Vec<usize> = period_order
        .iter()
        .copied()
        .filter(|q| scored.iter().any(|c| c.period == *q))
        .collect();
    let (period_mean_dss, cumulative_dss) = cumulative_mean_dss(&grid)?;
    let total = grid.iter().flatten().fold(0.0, |acc, v| acc + v);
    Ok(ScoreReport {
        model: model.to_string(),
        mean_dss: total / scored.len() as f64,
        mse: mse(&ys, &mus)?,
        cells: scored,
        coverage,
        period_order: order,
        period_mean_dss,
        cumulative_dss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dss_unit_cases() {
        assert_eq!(dss(5.0, 5.0, 1.0).unwrap(), 0.0);
        assert!((dss(10.0, 8.0, 2.0).unwrap() - (1.0 + 2.0 * 2f64.ln())).abs() < 1e-15);
        assert!(dss(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn dss_minimized_at_abs_error() {
        let (y, mu) = (7.0, 4.0);
        let best = (1..=600)
            .map(|k| k as f64 * 0.01)
            .min_by(|a, b| dss(y, mu, *a).unwrap().total_cmp(&dss(y, mu, *b).unwrap()))
            .unwrap();
        assert!((best - 3.0).abs() < 0.011);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mse(&[2.0, 4.0], &[2.0, 4.0]).unwrap(), 0.0);
        assert!(mse(&[], &[]).is_err());
        assert!(mse(&[1.0], &[]).is_err());
    }

    #[test]
    fn coverage_extremes() {
        let ys = [1.0, 5.0, 9.0];
        let all = [(f64::NEG_INFINITY, f64::INFINITY); 3];
        assert_eq!(empirical_coverage(&ys, &all).unwrap(), 1.0);
        assert_eq!(empirical_coverage(&ys, &[(0.0, 0.5); 3]).unwrap(), 0.0);
        assert!(empirical_coverage(&ys, &[(1.0, 0.0); 3]).is_err());
    }

    #[test]
    fn cumulative_curve() {
        let (per, curve) = cumulative_mean_dss(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(per, vec![1.0, 3.0]);
        assert_eq!(curve, vec![1.0, 2.0]);
        let (_, flat) = cumulative_mean_dss(&vec![vec![4.0; 3]; 5]).unwrap();
        assert!(flat.iter().all(|v| *v == 4.0));
        assert!(cumulative_mean_dss(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn report_aggregates_consistently() {
        let cells: Vec<ForecastCell> = (0..6)
            .map(|k| ForecastCell {
                age: k % 3,
                period: 4 + k / 3,
                stratum: 0,
                observed: k as f64,
                mean: 2.0,
                sd: 1.5,
                intervals: vec![(0.0, 3.0)],
            })
            .collect();
        let rep = score_forecast("m", &cells, &[0.9], &[5, 4]).unwrap();
        assert_eq!(rep.period_order, vec![5, 4]);
        let mean: f64 = rep.cells.iter().map(|c| c.dss).sum::<f64>() / 6.0;
        assert!((rep.mean_dss - mean).abs() < 1e-14);
        assert_eq!(rep.cumulative_dss[1], rep.mean_dss);
        assert_eq!(rep.coverage, vec![(0.9, 4.0 / 6.0)]);
    }
}
