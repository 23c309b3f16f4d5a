use mapc_core::forecast::{
    mixture_count_quantiles, mixture_moments, predictive_summary, relative_risks, RelativeRiskAverage,
};
use mapc_core::model::ApcModelSpec;
use mapc_core::sampler::{run_chain, SamplerConfig};
use mapc_core::synth::{generate, SynthConfig};
use mapc_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

proptest! {
    #[test]
    fn predictive_variance_dominates_mean(
        draws in prop::collection::vec(1e-6f64..1e-2, 1..60),
        exposure in 1.0f64..1e6,
    ) {
        let (_, var, mu, sigma2) = mixture_moments(&draws, exposure, 1.0).unwrap();
        prop_assert!(var >= 0.0);
        prop_assert!(sigma2 >= mu * (1.0 - 1e-12));
    }

    #[test]
    fn mixture_quantiles_are_monotone(
        draws in prop::collection::vec(1e-5f64..1e-3, 1..40),
        exposure in 1e3f64..1e6,
    ) {
        let p = [0.025, 0.1, 0.5, 0.9, 0.975];
        let q = mixture_count_quantiles(&draws, exposure, &p).unwrap();
        for w in q.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
    }
}

#[test]
fn predictive_moments_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<f64> = (0..500).map(|_| (-6.0 + rng.random_range(-0.3..0.3f64)).exp()).collect();
    let exposure = 40_000.0;
    let (_, _, mu, sigma2) = mixture_moments(&draws, exposure, 1.0).unwrap();
    let n = 1_000_000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..n {
        let lambda = draws[rng.random_range(0..draws.len())];
        let y = Poisson::new(exposure * lambda).unwrap().sample(&mut rng);
        sum += y;
        sq += y * y;
    }
    let mean = sum / n as f64;
    let var = sq / n as f64 - mean * mean;
    assert!((mean - mu).abs() / mu < 0.005, "mean {mean} vs {mu}");
    assert!((var - sigma2).abs() / sigma2 < 0.02, "var {var} vs {sigma2}");
}

#[test]
fn eighty_percent_intervals_cover_draws_from_the_predictive() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let trials = 4_000;
    let mut hits = 0;
    for _ in 0..trials {
        let centre: f64 = rng.random_range(-7.0..-5.0);
        let draws: Vec<f64> = (0..200).map(|_| (centre + rng.random_range(-0.2..0.2f64)).exp()).collect();
        let exposure = rng.random_range(1e4..1e5);
        let q = mixture_count_quantiles(&draws, exposure, &[0.1, 0.9]).unwrap();
        let lambda = draws[rng.random_range(0..draws.len())];
        let y = Poisson::new(exposure * lambda).unwrap().sample(&mut rng);
        if q[0] <= y && y <= q[1] {
            hits += 1;
        }
    }
    let cov = hits as f64 / trials as f64;
    assert!((cov - 0.80).abs() < 0.04, "coverage {cov}");
}

#[test]
fn relative_risks_against_self_are_one_and_need_a_shared_family() {
    let cfg = SynthConfig {
        ages: 4,
        periods: 6,
        strata: 2,
        ..SynthConfig::default()
    };
    let data = generate(&cfg).unwrap();
    let config = SamplerConfig::new(600, 200, 4, 1, 3);
    let samples = run_chain(&data.table, &cfg.matching_spec(), &config).unwrap();
    for mode in [RelativeRiskAverage::EffectDifference, RelativeRiskAverage::PredictorAverage] {
        let bands = relative_risks(&samples, 0, mode).unwrap();
        assert!(!bands.is_empty());
        for b in bands.iter().filter(|b| b.stratum == 0) {
            assert_eq!((b.lower, b.median, b.upper), (1.0, 1.0, 1.0));
        }
        for b in &bands {
            assert!(b.lower <= b.median && b.median <= b.upper);
        }
    }
    let indep = run_chain(&data.table, &ApcModelSpec::independent(), &config).unwrap();
    assert!(matches!(
        relative_risks(&indep, 0, RelativeRiskAverage::EffectDifference),
        Err(Error::NotIdentifiable(_))
    ));
}

#[test]
fn predictive_summary_covers_requested_levels() {
    let cfg = SynthConfig {
        ages: 4,
        periods: 6,
        strata: 2,
        ..SynthConfig::default()
    };
    let data = generate(&cfg).unwrap();
    let d = data.table.dims();
    let cells: Vec<usize> = (3..6).map(|j| d.cell(1, j, 1)).collect();
    let masked = data.table.masked(cells.clone());
    let samples = run_chain(&masked, &cfg.matching_spec(), &SamplerConfig::new(1_000, 200, 4, 2, 5)).unwrap();
    let summary = predictive_summary(&samples, &data.table, &cells, &[0.5, 0.95], "apc").unwrap();
    assert_eq!(summary.cells.len(), 3);
    let wide = summary.intervals(0.95).unwrap();
    let narrow = summary.intervals(0.5).unwrap();
    for ((a, b), (c, e)) in wide.iter().zip(&narrow) {
        assert!(a <= c && e <= b);
    }
    for c in &summary.cells {
        assert!(c.sd * c.sd >= c.mean * (1.0 - 1e-9));
    }
}
