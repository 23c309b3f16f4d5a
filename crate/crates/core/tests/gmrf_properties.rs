use mapc_core::gmrf::{
    admissible_lower_bound, build_kronecker_precision, build_rw2_precision, sample_constrained_gmrf,
    LinearConstraintSet, SparsePrecision, UniformCorrelation,
};
use mapc_core::model::fisher_z_to_rho;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn admissible(r: usize, u: f64) -> f64 {
    let lo = admissible_lower_bound(r);
    lo + (1.0 - lo) * (0.02 + 0.96 * u)
}

proptest! {
    #[test]
    fn inverse_times_matrix_is_identity(r in 2usize..9, u in 0.0f64..1.0) {
        let c = UniformCorrelation::new(r, admissible(r, u)).unwrap();
        let prod = c.inverse() * c.matrix();
        let err = (prod - DMatrix::<f64>::identity(r, r)).abs().max();
        prop_assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn log_det_matches_lu(r in 2usize..9, u in 0.0f64..1.0) {
        let c = UniformCorrelation::new(r, admissible(r, u)).unwrap();
        let det = c.matrix().determinant();
        prop_assert!((c.log_det() - det.ln()).abs() < 1e-9);
    }

    #[test]
    fn kronecker_quad_form_matches_dense(
        r in 1usize..4,
        n in 3usize..8,
        u in 0.0f64..1.0,
        kappa in 0.1f64..20.0,
        seed in any::<u64>(),
    ) {
        let rho = if r == 1 { 0.0 } else { admissible(r, u) };
        let corr = UniformCorrelation::new(r, rho).unwrap();
        let p = build_rw2_precision(n, kappa).unwrap();
        let q = build_kronecker_precision(&corr, &p).unwrap();
        let dense = corr.inverse().kronecker(&p.to_dense());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..r * n).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let brute = (xv.transpose() * &dense * &xv)[(0, 0)];
        let fast = q.quad_form(&x).unwrap();
        prop_assert!((fast - brute).abs() <= 1e-9 * brute.abs().max(1.0));
    }

    #[test]
    fn fisher_z_is_increasing(r in 2usize..7, a in -30.0f64..30.0, d in 1e-3f64..5.0) {
        let lo = fisher_z_to_rho(a, r).unwrap();
        let hi = fisher_z_to_rho(a + d, r).unwrap();
        prop_assert!(hi.fisher_z() > lo.fisher_z());
        prop_assert!(hi.rho() >= lo.rho());
    }

    #[test]
    fn constrained_draws_satisfy_constraints(r in 1usize..4, n in 3usize..12, seed in any::<u64>()) {
        let corr = UniformCorrelation::new(r, if r == 1 { 0.0 } else { 0.4 }).unwrap();
        let q = build_kronecker_precision(&corr, &build_rw2_precision(n, 3.0).unwrap()).unwrap();
        let mut cons = LinearConstraintSet::empty(r * n);
        for s in 0..r {
            cons.push_sum_to_zero(s * n, n).unwrap();
            cons.push_zero_linear_trend(s * n, n).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = vec![0.5; r * n];
        let x = sample_constrained_gmrf(&b, &q, &cons, &mut rng).unwrap();
        prop_assert!(cons.max_residual(&x) < 1e-10);
    }
}

#[test]
fn constrained_covariance_matches_conditional_gaussian() {
    let n = 5;
    let base = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            3.0 + i as f64 * 0.5
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    });
    let q = SparsePrecision::from_dense(&base).unwrap();
    let mut cons = LinearConstraintSet::empty(n);
    cons.push_sum_to_zero(0, n).unwrap();

    let sigma = base.clone().try_inverse().unwrap();
    let a = DMatrix::from_element(1, n, 1.0);
    let sat = &sigma * a.transpose();
    let oracle = &sigma - &sat * (&a * &sigma * a.transpose()).try_inverse().unwrap() * sat.transpose();

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = 50_000;
    let zero = vec![0.0; n];
    let mut acc = DMatrix::<f64>::zeros(n, n);
    let mut mean = vec![0.0; n];
    let samples: Vec<Vec<f64>> = (0..draws)
        .map(|_| sample_constrained_gmrf(&zero, &q, &cons, &mut rng).unwrap())
        .collect();
    for x in &samples {
        for i in 0..n {
            mean[i] += x[i] / draws as f64;
        }
    }
    for x in &samples {
        for i in 0..n {
            for j in 0..n {
                acc[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / (draws as f64 - 1.0);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let se = ((oracle[(i, i)] * oracle[(j, j)] + oracle[(i, j)].powi(2)) / draws as f64).sqrt();
            assert!(
                (acc[(i, j)] - oracle[(i, j)]).abs() < 4.0 * se,
                "({i},{j}) empirical {} vs {}",
                acc[(i, j)],
                oracle[(i, j)]
            );
        }
    }
}
