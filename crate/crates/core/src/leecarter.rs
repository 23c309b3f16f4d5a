//! Quasi-Poisson Lee-Carter baseline.
//!
//! `log lambda_ij = alpha_i + beta_i kappa_j`, fitted by alternating
//! one-step Newton updates of the Poisson likelihood (Brouhns, Denuit and
//! Vermunt) with step halving, under `sum kappa = 0` and `sum beta = 1`.
//! The time index is extrapolated as a random walk with drift.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{interval_probabilities, CellPrediction, PredictiveSummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeeCarterOptions {
    pub max_sweeps: usize,
    /// Relative deviance change declaring convergence.
    pub tolerance: f64,
    /// Add `(h drift_se)^2` to the h-step variance of kappa.
    pub drift_uncertainty: bool,
}

impl Default for LeeCarterOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 500,
            tolerance: 1e-10,
            drift_uncertainty: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeeCarterFit {
    pub ages: usize,
    pub periods: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub drift: f64,
    pub drift_se: f64,
    /// Innovation variance of the first differences of kappa.
    pub innovation_var: f64,
    /// Quasi-Poisson dispersion, at least 1.
    pub phi: f64,
    pub deviance: f64,
    /// Deviance after each sweep.
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
}

impl LeeCarterFit {
    pub fn log_rate(&self, i: usize, kappa: f64) -> f64 {
        self.alpha[i] + self.beta[i] * kappa
    }

    /// Fitted log rates, age-major.
    pub fn fitted_log_rates(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ages * self.periods);
        for i in 0..self.ages {
            for &k in &self.kappa {
                out.push(self.log_rate(i, k));
            }
        }
        out
    }

    /// Largest absolute residual of the two identifiability constraints.
    pub fn constraint_residual(&self) -> f64 {
        let sk: f64 = self.kappa.iter().sum();
        let sb: f64 = self.beta.iter().sum();
        sk.abs().max((sb - 1.0).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Gaussian marginal of the h-step extrapolated time index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaForecast {
    pub horizon: usize,
    pub mean: f64,
    pub var: f64,
}

struct Workspace<'a> {
    ages: usize,
    periods: usize,
    y: &'a [f64],
    n: &'a [f64],
    ridge: f64,
}

impl Workspace<'_> {
    fn fitted(&self, a: &[f64], b: &[f64], k: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.y.len());
        for i in 0..self.ages {
            for j in 0..self.periods {
                out.push(self.n[i * self.periods + j] * (a[i] + b[i] * k[j]).exp());
            }
        }
        out
    }

    fn deviance(&self, a: &[f64], b: &[f64], k: &[f64]) -> f64 {
        let fit = self.fitted(a, b, k);
        let dev: f64 = self
            .y
            .iter()
            .zip(&fit)
            .map(|(&y, &m)| {
                let t = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
                2.0 * (t - (y - m))
            })
            .sum();
        dev + self.ridge * (a.iter().map(|v| v * v).sum::<f64>() + k.iter().map(|v| v * v).sum::<f64>())
    }
}

/// Fits one stratum. `deaths` and `exposure` are age-major `ages x periods`
/// grids with every cell observed.
pub fn fit_lee_carter(
    deaths: &[f64],
    exposure: &[f64],
    ages: usize,
    periods: usize,
    options: &LeeCarterOptions,
) -> Result<LeeCarterFit> {
    if ages < 2 || periods < 3 {
        return Err(Error::InsufficientData(format!(
            "Lee-Carter needs at least 2 ages and 3 periods, got {ages}x{periods}"
        )));
    }
    let cells = ages * periods;
    if deaths.len() != cells {
        return Err(Error::DimensionMismatch { expected: cells, actual: deaths.len() });
    }
    if exposure.len() != cells {
        return Err(Error::DimensionMismatch { expected: cells, actual: exposure.len() });
    }
    if let Some(c) = deaths.iter().position(|y| !(*y >= 0.0) || !y.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid death count at cell {c}")));
    }
    if let Some(c) = exposure.iter().position(|n| !(*n > 0.0) || !n.is_finite()) {
        return Err(Error::InvalidParameter(format!("nonpositive exposure at cell {c}")));
    }
    let zero_row = (0..ages).any(|i| deaths[i * periods..(i + 1) * periods].iter().all(|y| *y == 0.0));
    let zero_col = (0..periods).any(|j| (0..ages).all(|i| deaths[i * periods + j] == 0.0));
    let ridge = if zero_row || zero_col {
        log::warn!("Lee-Carter fit has an all-zero age row or period column; using ridge fallback");
        1e-3
    } else {
        0.0
    };
    let ws = Workspace {
        ages,
        periods,
        y: deaths,
        n: exposure,
        ridge,
    };

    let (mut a, mut b, mut k) = svd_start(deaths, exposure, ages, periods);
    let mut dev = ws.deviance(&a, &b, &k);
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..options.max_sweeps {
        // alpha
        let fit = ws.fitted(&a, &b, &k);
        let step: Vec<f64> = (0..ages)
            .map(|i| {
                let (mut g, mut h) = (-ridge * a[i], ridge);
                for j in 0..periods {
                    let c = i * periods + j;
                    g += deaths[c] - fit[c];
                    h += fit[c];
                }
                g / h
            })
            .collect();
        dev = halve(dev, &mut a, &step, |a| ws.deviance(a, &b, &k));
        // kappa
        let fit = ws.fitted(&a, &b, &k);
        let step: Vec<f64> = (0..periods)
            .map(|j| {
                let (mut g, mut h) = (-ridge * k[j], ridge);
                for i in 0..ages {
                    let c = i * periods + j;
                    g += (deaths[c] - fit[c]) * b[i];
                    h += fit[c] * b[i] * b[i];
                }
                if h > 0.0 { g / h } else { 0.0 }
            })
            .collect();
        dev = halve(dev, &mut k, &step, |k| ws.deviance(&a, &b, k));
        // beta
        let fit = ws.fitted(&a, &b, &k);
        let step: Vec<f64> = (0..ages)
            .map(|i| {
                let (mut g, mut h) = (0.0, 0.0);
                for j in 0..periods {
                    let c = i * periods + j;
                    g += (deaths[c] - fit[c]) * k[j];
                    h += fit[c] * k[j] * k[j];
                }
                if h > 0.0 { g / h } else { 0.0 }
            })
            .collect();
        halve(dev, &mut b, &step, |b| ws.deviance(&a, b, &k));
        renormalize(&mut a, &mut b, &mut k);
        let new_dev = ws.deviance(&a, &b, &k);
        let prev = trace.last().copied().unwrap_or(f64::INFINITY);
        trace.push(new_dev);
        let change = (prev - new_dev).abs() / new_dev.abs().max(1.0);
        dev = new_dev;
        if change < options.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("Lee-Carter fit stopped after {} sweeps without converging", options.max_sweeps);
    }

    let fit = ws.fitted(&a, &b, &k);
    let pearson: f64 = deaths.iter().zip(&fit).map(|(y, m)| (y - m) * (y - m) / m).sum();
    let dof = ((ages - 1) * (periods - 2)) as f64;
    let phi = (pearson / dof).max(1.0);
    let (drift, innovation_var) = random_walk_drift(&k)?;
    Ok(LeeCarterFit {
        ages,
        periods,
        alpha: a,
        beta: b,
        drift,
        drift_se: (innovation_var / (periods - 1) as f64).sqrt(),
        innovation_var,
        kappa: k,
        phi,
        deviance: dev,
        deviance_trace: trace,
        converged,
    })
}

/// Tries `x + step`, halving the step until the deviance does not increase.
fn halve<F: Fn(&[f64]) -> f64>(dev: f64, x: &mut Vec<f64>, step: &[f64], eval: F) -> f64 {
    let mut scale = 1.0;
    for _ in 0..40 {
        let trial: Vec<f64> = x.iter().zip(step).map(|(v, s)| v + scale * s).collect();
        let d = eval(&trial);
        if d.is_finite() && d <= dev {
            *x = trial;
            return d;
        }
        scale *= 0.5;
    }
    dev
}

/// Moves the means so `sum kappa = 0` and `sum beta = 1` without changing
/// the fitted values.
fn renormalize(a: &mut [f64], b: &mut [f64], k: &mut [f64]) {
    let kbar = k.iter().sum::<f64>() / k.len() as f64;
    for (ai, bi) in a.iter_mut().zip(b.iter()) {
        *ai += bi * kbar;
    }
    k.iter_mut().for_each(|v| *v -= kbar);
    let s: f64 = b.iter().sum();
    if s.abs() > 1e-300 {
        b.iter_mut().for_each(|v| *v /= s);
        k.iter_mut().for_each(|v| *v *= s);
    }
    // Centre once more: scaling by s keeps the mean zero up to rounding.
    let kbar = k.iter().sum::<f64>() / k.len() as f64;
    for (ai, bi) in a.iter_mut().zip(b.iter()) {
        *ai += bi * kbar;
    }
    k.iter_mut().for_each(|v| *v -= kbar);
}

fn svd_start(y: &[f64], n: &[f64], ages: usize, periods: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let logm = DMatrix::from_fn(ages, periods, |i, j| {
        let c = i * periods + j;
        ((y[c] + 0.5) / n[c]).ln()
    });
    let a: Vec<f64> = (0..ages).map(|i| logm.row(i).mean()).collect();
    let centred = DMatrix::from_fn(ages, periods, |i, j| logm[(i, j)] - a[i]);
    let svd = centred.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let lead = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map_or(0, |(k, _)| k);
    let sv = svd.singular_values[lead];
    let mut b: Vec<f64> = (0..ages).map(|i| u[(i, lead)]).collect();
    let mut k: Vec<f64> = (0..periods).map(|j| vt[(lead, j)] * sv).collect();
    let mut a = a;
    if b.iter().sum::<f64>().abs() < 1e-8 || sv < 1e-12 {
        b = vec![1.0 / ages as f64; ages];
        k = vec![0.0; periods];
    }
    renormalize(&mut a, &mut b, &mut k);
    (a, b, k)
}

/// Endpoint drift and innovation variance of a random walk with drift.
fn random_walk_drift(kappa: &[f64]) -> Result<(f64, f64)> {
    let j = kappa.len();
    if j < 3 {
        return Err(Error::InsufficientData(format!("drift needs at least 3 periods, got {j}")));
    }
    let drift = (kappa[j - 1] - kappa[0]) / (j - 1) as f64;
    let s2 = kappa
        .windows(2)
        .map(|w| {
            let e = w[1] - w[0] - drift;
            e * e
        })
        .sum::<f64>()
        / (j - 2) as f64;
    Ok((drift, s2))
}

/// h-step forecasts of kappa for `h = 1..=horizon` beyond the last
/// (forward) or before the first (backward) fitted period.
pub fn extrapolate_kappa(
    fit: &LeeCarterFit,
    horizon: usize,
    direction: Direction,
    options: &LeeCarterOptions,
) -> Result<Vec<KappaForecast>> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let j = fit.kappa.len();
    if j < 3 {
        return Err(Error::InsufficientData(format!("drift needs at least 3 periods, got {j}")));
    }
    let (origin, sign) = match direction {
        Direction::Forward => (fit.kappa[j - 1], 1.0),
        Direction::Backward => (fit.kappa[0], -1.0),
    };
    Ok((1..=horizon)
        .map(|h| {
            let hf = h as f64;
            let mut var = hf * fit.innovation_var;
            if options.drift_uncertainty {
                var += (hf * fit.drift_se).powi(2);
            }
            KappaForecast {
                horizon: h,
                mean: origin + sign * hf * fit.drift,
                var,
            }
        })
        .collect())
}

/// One negative binomial draw with mean `m` and variance `phi m`, as a
/// Poisson-Gamma mixture with `d = m / (phi - 1)`; Poisson when `phi = 1`.
pub fn sample_quasi_poisson<R: Rng + ?Sized>(m: f64, phi: f64, rng: &mut R) -> Result<u64> {
    if !(phi >= 1.0) {
        return Err(Error::InvalidParameter(format!("dispersion must be at least 1, got {phi}")));
    }
    if !(m > 0.0) {
        return Ok(0);
    }
    let mean = if phi > 1.0 {
        let d = m / (phi - 1.0);
        let g = Gamma::new(d, m / d).map_err(|e| Error::Numerical(format!("gamma({d}): {e}")))?;
        g.sample(rng)
    } else {
        m
    };
    if !(mean > 0.0) {
        return Ok(0);
    }
    let p = Poisson::new(mean).map_err(|e| Error::Numerical(format!("poisson({mean}): {e}")))?;
    Ok(p.sample(rng) as u64)
}

/// A cell to predict: its age, the calendar period and stratum labels used
/// in the output, its exposure and the extrapolated kappa of its period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeeCarterCell {
    pub age: usize,
    pub period: usize,
    pub stratum: usize,
    pub exposure: f64,
    pub kappa: KappaForecast,
}

/// Predictive distribution of each cell from `draws` simulations. Kappa
/// draws are shared by cells of the same period. Moments use
/// `sigma^2 = phi n E(lambda) + n^2 Var(lambda)`; quantiles are empirical
/// quantiles of the simulated counts.
pub fn lee_carter_predictive<R: Rng + ?Sized>(
    fit: &LeeCarterFit,
    cells: &[LeeCarterCell],
    levels: &[f64],
    draws: usize,
    rng: &mut R,
) -> Result<PredictiveSummary> {
    if draws == 0 {
        return Err(Error::InvalidParameter("at least one predictive draw required".into()));
    }
    if !(fit.phi >= 1.0) {
        return Err(Error::InvalidParameter(format!("dispersion must be at least 1, got {}", fit.phi)));
    }
    let probabilities = interval_probabilities(levels)?;
    let mut periods: Vec<usize> = cells.iter().map(|c| c.period).collect();
    periods.sort_unstable();
    periods.dedup();
    let mut kappa_draws = Vec::with_capacity(periods.len());
    for &p in &periods {
        let kf = cells.iter().find(|c| c.period == p).map(|c| c.kappa).expect("period taken from cells");
        let normal = Normal::new(kf.mean, kf.var.max(0.0).sqrt())
            .map_err(|e| Error::Numerical(format!("kappa forecast: {e}")))?;
        kappa_draws.push((0..draws).map(|_| normal.sample(rng)).collect::<Vec<f64>>());
    }
    let mut out = Vec::with_capacity(cells.len());
    for c in cells {
        if c.age >= fit.ages {
            return Err(Error::OutOfRange(format!("age {} outside fit", c.age)));
        }
        let kd = &kappa_draws[periods.binary_search(&c.period).expect("period present")];
        let rates: Vec<f64> = kd.iter().map(|&k| fit.log_rate(c.age, k).exp()).collect();
        let s = draws as f64;
        let rate_mean = rates.iter().sum::<f64>() / s;
        let rate_var = rates.iter().map(|l| (l - rate_mean).powi(2)).sum::<f64>() / s;
        let mean = c.exposure * rate_mean;
        let var = fit.phi * mean + c.exposure * c.exposure * rate_var;
        let mut counts = rates
            .iter()
            .map(|&l| sample_quasi_poisson(c.exposure * l, fit.phi, rng).map(|y| y as f64))
            .collect::<Result<Vec<f64>>>()?;
        counts.sort_by(f64::total_cmp);
        let count_quantiles = probabilities
            .iter()
            .map(|&p| counts[((p * s).ceil() as usize).clamp(1, draws) - 1])
            .collect();
        out.push(CellPrediction {
            age: c.age,
            period: c.period,
            stratum: c.stratum,
            exposure: c.exposure,
            rate_mean,
            rate_var,
            mean,
            sd: var.sqrt(),
            count_quantiles,
        });
    }
    Ok(PredictiveSummary {
        model: "lee-carter".into(),
        probabilities,
        cells: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bilinear(ages: usize, periods: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let alpha: Vec<f64> = (0..ages).map(|i| -7.0 + 0.5 * i as f64).collect();
        let raw: Vec<f64> = (0..ages).map(|i| 1.0 + 0.3 * (i as f64).sin()).collect();
        let sb: f64 = raw.iter().sum();
        let beta: Vec<f64> = raw.iter().map(|b| b / sb).collect();
        let rawk: Vec<f64> = (0..periods).map(|j| -1.5 * j as f64 + 0.8 * (j as f64 * 0.9).cos()).collect();
        let kbar = rawk.iter().sum::<f64>() / periods as f64;
        let kappa: Vec<f64> = rawk.iter().map(|k| k - kbar).collect();
        let n = vec![1e5; ages * periods];
        let mut y = Vec::new();
        for i in 0..ages {
            for j in 0..periods {
                y.push(1e5 * (alpha[i] + beta[i] * kappa[j]).exp());
            }
        }
        (alpha, beta, kappa, y, n)
    }

    #[test]
    fn noiseless_recovery() {
        let (alpha, beta, kappa, y, n) = bilinear(6, 10);
        let fit = fit_lee_carter(&y, &n, 6, 10, &LeeCarterOptions::default()).unwrap();
        assert!(fit.constraint_residual() < 1e-8);
        for i in 0..6 {
            assert!((fit.alpha[i] - alpha[i]).abs() < 1e-6, "alpha {i}");
            assert!((fit.beta[i] - beta[i]).abs() < 1e-6, "beta {i}");
        }
        for j in 0..10 {
            assert!((fit.kappa[j] - kappa[j]).abs() < 1e-6, "kappa {j}");
        }
        assert_eq!(fit.phi, 1.0);
    }

    #[test]
    fn deviance_monotone() {
        let (_, _, _, y, n) = bilinear(5, 8);
        let noisy: Vec<f64> = y.iter().enumerate().map(|(c, v)| (v * (1.0 + 0.05 * (c as f64).sin())).round()).collect();
        let fit = fit_lee_carter(&noisy, &n, 5, 8, &LeeCarterOptions::default()).unwrap();
        assert!(fit.deviance_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn drift_endpoint_formula() {
        let (d, s2) = random_walk_drift(&[-2.0, 0.0, 2.0]).unwrap();
        assert_eq!((d, s2), (2.0, 0.0));
        assert!(random_walk_drift(&[0.0, 1.0]).is_err());
    }

    fn linear_fit(kappa: Vec<f64>) -> LeeCarterFit {
        let (drift, innovation_var) = random_walk_drift(&kappa).unwrap();
        LeeCarterFit {
            ages: 1,
            periods: kappa.len(),
            alpha: vec![0.0],
            beta: vec![1.0],
            drift,
            drift_se: (innovation_var / (kappa.len() - 1) as f64).sqrt(),
            innovation_var,
            kappa,
            phi: 1.0,
            deviance: 0.0,
            deviance_trace: vec![],
            converged: true,
        }
    }

    #[test]
    fn linear_kappa_extends_exactly() {
        let fit = linear_fit(vec![-3.0, -1.0, 1.0, 3.0]);
        let fw = extrapolate_kappa(&fit, 3, Direction::Forward, &LeeCarterOptions::default()).unwrap();
        assert_eq!(fw.iter().map(|f| f.mean).collect::<Vec<_>>(), vec![5.0, 7.0, 9.0]);
        assert!(fw.iter().all(|f| f.var == 0.0));
        let bw = extrapolate_kappa(&fit, 2, Direction::Backward, &LeeCarterOptions::default()).unwrap();
        assert_eq!(bw.iter().map(|f| f.mean).collect::<Vec<_>>(), vec![-5.0, -7.0]);
    }

    #[test]
    fn backward_is_reversed_forward() {
        let k = vec![0.3, -0.1, 0.5, 0.2, 1.1, 0.9];
        let rev: Vec<f64> = k.iter().rev().copied().collect();
        let opts = LeeCarterOptions::default();
        let bw = extrapolate_kappa(&linear_fit(k), 4, Direction::Backward, &opts).unwrap();
        let fw = extrapolate_kappa(&linear_fit(rev), 4, Direction::Forward, &opts).unwrap();
        for (a, b) in bw.iter().zip(&fw) {
            assert!((a.mean - b.mean).abs() < 1e-12 && (a.var - b.var).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_grows_with_horizon() {
        let fit = linear_fit(vec![0.0, 0.4, 0.5, 1.2, 1.3, 2.0]);
        let opts = LeeCarterOptions::default();
        let f = extrapolate_kappa(&fit, 5, Direction::Forward, &opts).unwrap();
        assert!(f.windows(2).all(|w| w[1].var > w[0].var));
        let no_drift = LeeCarterOptions { drift_uncertainty: false, ..opts };
        let g = extrapolate_kappa(&fit, 5, Direction::Forward, &no_drift).unwrap();
        assert!((g[4].var - 5.0 * fit.innovation_var).abs() < 1e-14);
    }

    #[test]
    fn negative_binomial_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, phi) = (40.0, 2.0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_quasi_poisson(m, phi, &mut rng).unwrap() as f64)
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((mean / m - 1.0).abs() < 0.02);
        assert!((var / (phi * m) - 1.0).abs() < 0.02);
        assert!(sample_quasi_poisson(1.0, 0.9, &mut rng).is_err());
    }

    #[test]
    fn too_few_periods() {
        assert!(fit_lee_carter(&[1.0; 4], &[1.0; 4], 2, 2, &LeeCarterOptions::default()).is_err());
    }

    #[test]
    fn zero_row_falls_back() {
        let (_, _, _, mut y, n) = bilinear(4, 6);
        y[..6].iter_mut().for_each(|v| *v = 0.0);
        let fit = fit_lee_carter(&y, &n, 4, 6, &LeeCarterOptions::default()).unwrap();
        assert!(fit.alpha.iter().all(|a| a.is_finite()));
    }
}
