use mapc_core::leecarter::{extrapolate_kappa, fit_lee_carter, sample_quasi_poisson, Direction, LeeCarterOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use statrs::distribution::{DiscreteCDF, Poisson as PoissonDist};

fn surface(ages: usize, periods: usize) -> (Vec<f64>, Vec<f64>) {
    let alpha: Vec<f64> = (0..ages).map(|i| -6.5 + 0.5 * i as f64).collect();
    let kappa: Vec<f64> = (0..periods).map(|j| 2.0 - 0.4 * j as f64).collect();
    let exposure = vec![5.0e4; ages * periods];
    let mean = (0..ages * periods)
        .map(|c| exposure[c] * (alpha[c / periods] + kappa[c % periods] / ages as f64).exp())
        .collect();
    (mean, exposure)
}

#[test]
fn uniform_beta_matches_log_linear_oracle() {
    // With beta fixed at 1/I the model is log-linear in (alpha, kappa); the
    // free fit must attain at most the oracle deviance on noiseless data.
    let (ages, periods) = (5, 9);
    let (mean, exposure) = surface(ages, periods);
    let fit = fit_lee_carter(&mean, &exposure, ages, periods, &LeeCarterOptions::default()).unwrap();
    for b in &fit.beta {
        assert!((b - 1.0 / ages as f64).abs() < 1e-6, "beta {b}");
    }
    assert!(fit.deviance < 1e-8, "deviance {}", fit.deviance);
}

#[test]
fn poisson_data_give_dispersion_near_one() {
    let (ages, periods) = (6, 12);
    let (mean, exposure) = surface(ages, periods);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut phis = Vec::new();
    for _ in 0..20 {
        let y: Vec<f64> = mean.iter().map(|m| Poisson::new(*m).unwrap().sample(&mut rng)).collect();
        let fit = fit_lee_carter(&y, &exposure, ages, periods, &LeeCarterOptions::default()).unwrap();
        assert!(fit.converged);
        phis.push(fit.phi);
    }
    let avg = phis.iter().sum::<f64>() / phis.len() as f64;
    assert!((0.8..=1.3).contains(&avg), "mean phi {avg}");
}

#[test]
fn unit_dispersion_sampler_is_poisson() {
    let m = 12.5;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut counts = vec![0usize; 80];
    for _ in 0..n {
        let y = sample_quasi_poisson(m, 1.0, &mut rng).unwrap() as usize;
        counts[y.min(79)] += 1;
    }
    let dist = PoissonDist::new(m).unwrap();
    let mut cum = 0usize;
    let mut ks = 0.0f64;
    for (y, c) in counts.iter().enumerate() {
        cum += c;
        ks = ks.max((cum as f64 / n as f64 - dist.cdf(y as u64)).abs());
    }
    assert!(ks < 0.01, "KS distance {ks}");
}

#[test]
fn kappa_uncertainty_grows_with_horizon_in_both_directions() {
    let (ages, periods) = (5, 10);
    let (mean, exposure) = surface(ages, periods);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y: Vec<f64> = mean.iter().map(|m| Poisson::new(*m).unwrap().sample(&mut rng)).collect();
    let opts = LeeCarterOptions::default();
    let fit = fit_lee_carter(&y, &exposure, ages, periods, &opts).unwrap();
    for dir in [Direction::Forward, Direction::Backward] {
        let f = extrapolate_kappa(&fit, 6, dir, &opts).unwrap();
        assert_eq!(f.len(), 6);
        for w in f.windows(2) {
            assert!(w[1].var > w[0].var);
        }
    }
}
