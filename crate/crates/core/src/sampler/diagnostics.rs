//! Effective sample size and split-chain potential scale reduction,
//! following the Stan reference implementation (Geyer's initial monotone
//! sequence over chain-averaged autocorrelations).

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

fn trimmed(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    chains.iter().map(|c| &c[..n]).collect()
}

/// Effective sample size of a scalar across chains. NaN when fewer than
/// four draws per chain or the trace is constant.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let chains = trimmed(chains);
    let m = chains.len();
    let n = chains.first().map_or(0, |c| c.len());
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = chains.iter().map(|c| autocovariance(c, 0)).collect();
    let nf = n as f64;
    let mean_var = mean(&acov0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_variance(&means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho_at = |lag: usize| {
        let mean_acov = chains.iter().map(|c| autocovariance(c, lag)).sum::<f64>() / m as f64;
        1.0 - (mean_var - mean_acov) / var_plus
    };
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = rho_even;
    }
    // Enforce a monotone sequence of pair sums.
    let mut t = 1;
    while t + 4 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let tail = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = -1.0 + 2.0 * rho[..=max_t.min(n - 1)].iter().sum::<f64>() + tail;
    (m * n) as f64 / tau.max(1.0 / ((m * n) as f64).log10().max(1.0))
}

/// Potential scale reduction of already-split (or independent) chains.
pub fn potential_scale_reduction(chains: &[Vec<f64>]) -> f64 {
    let chains = trimmed(chains);
    let m = chains.len();
    let n = chains.first().map_or(0, |c| c.len());
    if m < 2 || n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let within = chains.iter().map(|c| sample_variance(c)).sum::<f64>() / m as f64;
    let between_over_n = sample_variance(&means);
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * within + between_over_n;
    (var_plus / within).sqrt()
}

/// Split-chain R-hat: each chain is halved (dropping the middle draw of
/// odd-length chains) before computing the potential scale reduction.
pub fn split_potential_scale_reduction(chains: &[Vec<f64>]) -> f64 {
    let chains = trimmed(chains);
    let n = chains.first().map_or(0, |c| c.len());
    let half = n / 2;
    let mut split = Vec::with_capacity(2 * chains.len());
    for c in chains {
        split.push(c[..half].to_vec());
        split.push(c[n - half..].to_vec());
    }
    potential_scale_reduction(&split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + e;
                x
            })
            .collect()
    }

    #[test]
    fn iid_draws_have_full_ess() {
        let chains: Vec<Vec<f64>> = (0..4).map(|s| ar1(0.0, 2000, s)).collect();
        let ess = effective_sample_size(&chains);
        assert!(ess > 6000.0 && ess < 10_000.0, "{ess}");
        let rhat = split_potential_scale_reduction(&chains);
        assert!((rhat - 1.0).abs() < 0.01, "{rhat}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // tau = (1 + phi) / (1 - phi) = 9 for phi = 0.8.
        let chains: Vec<Vec<f64>> = (0..4).map(|s| ar1(0.8, 20_000, 10 + s)).collect();
        let ess = effective_sample_size(&chains);
        let theory = 80_000.0 / 9.0;
        assert!((ess / theory - 1.0).abs() < 0.15, "{ess} vs {theory}");
    }

    #[test]
    fn shifted_chains_flag_nonconvergence() {
        let mut chains: Vec<Vec<f64>> = (0..2).map(|s| ar1(0.0, 1000, s)).collect();
        chains[1].iter_mut().for_each(|v| *v += 5.0);
        assert!(split_potential_scale_reduction(&chains) > 1.5);
    }

    #[test]
    fn constant_trace_is_nan() {
        assert!(effective_sample_size(&[vec![1.0; 100]]).is_nan());
    }
}
