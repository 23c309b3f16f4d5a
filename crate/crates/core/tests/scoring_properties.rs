use mapc_core::scoring::{cumulative_mean_dss, dss, empirical_coverage, mse};
use proptest::prelude::*;
use statrs::distribution::{Discrete, Poisson};

/// Expected DSS of a forecast `(mu, sigma)` under `y ~ Poisson(m)`, summed
/// over the pmf.
fn expected_dss(m: f64, mu: f64, sigma: f64) -> f64 {
    let dist = Poisson::new(m).unwrap();
    let top = (m + 12.0 * m.sqrt() + 20.0) as u64;
    (0..=top).map(|y| dist.pmf(y) * dss(y as f64, mu, sigma).unwrap()).sum()
}

proptest! {
    #[test]
    fn dss_is_proper(m in 0.5f64..200.0, dmu in -0.5f64..0.5, ds in 0.5f64..2.0) {
        let truth = expected_dss(m, m, m.sqrt());
        let other = expected_dss(m, m * (1.0 + dmu), m.sqrt() * ds);
        prop_assert!(truth <= other + 1e-9);
    }

    #[test]
    fn mse_ignores_cell_order(pairs in prop::collection::vec((0.0f64..1e3, 0.0f64..1e3), 1..50)) {
        let (y, m): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut rev = pairs.clone();
        rev.reverse();
        let (yr, mr): (Vec<f64>, Vec<f64>) = rev.into_iter().unzip();
        prop_assert!((mse(&y, &m).unwrap() - mse(&yr, &mr).unwrap()).abs() <= 1e-9 * mse(&y, &m).unwrap().max(1.0));
    }

    #[test]
    fn coverage_is_a_fraction(obs in prop::collection::vec(0.0f64..100.0, 1..40), w in 0.0f64..50.0) {
        let ivs: Vec<(f64, f64)> = obs.iter().map(|_| (50.0 - w, 50.0 + w)).collect();
        let c = empirical_coverage(&obs, &ivs).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn cumulative_curve_ends_at_grand_mean(grid in prop::collection::vec(prop::collection::vec(-5.0f64..20.0, 4), 1..12)) {
        let (per, curve) = cumulative_mean_dss(&grid).unwrap();
        prop_assert_eq!(per.len(), grid.len());
        let total: f64 = grid.iter().flatten().sum();
        let n = (grid.len() * 4) as f64;
        prop_assert!((curve.last().unwrap() - total / n).abs() < 1e-12);
    }
}

#[test]
fn dss_reference_values() {
    assert_eq!(dss(3.0, 3.0, 1.0).unwrap(), 0.0);
    assert_eq!(dss(10.0, 8.0, 2.0).unwrap(), 1.0 + 2.0 * 2.0f64.ln());
    assert!(dss(1.0, 1.0, 0.0).is_err());
}
