use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use overlap_dr::datagen::{make_dataset, Scenario};
use overlap_dr::diagnostics::{
    interval_bounds, interval_index, population_mask, MeanMav, Population, TailRule, N_INTERVALS,
};
use overlap_dr::estimators::{
    apply_trim, estimate_dr, estimate_ipw_hajek, estimate_ipw_ht, estimate_ow, om_from_predictions,
};
use overlap_dr::models::{build_design, fit_logistic, fit_outcome, least_squares};
use overlap_dr::seed::derive_replicate_seed;
use overlap_dr::simharness::summarize;
use overlap_dr::{CovariateForm, OutcomeStructure};

fn arms(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), n).prop_map(|mut z| {
        z[0] = true;
        z[1] = false;
        z
    })
}

fn inputs() -> impl Strategy<Value = (Vec<bool>, Vec<f64>, Vec<f64>)> {
    (4usize..80).prop_flat_map(|n| {
        (arms(n), prop::collection::vec(-20.0f64..20.0, n), prop::collection::vec(0.02f64..0.98, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dr_collapses_to_om_and_ht((z, y, e) in inputs()) {
        let mu0: Vec<f64> = y.iter().map(|v| 0.5 * v - 1.0).collect();
        let mu1: Vec<f64> = y.iter().map(|v| 0.5 * v + 2.0).collect();
        let fitted: Vec<f64> = z.iter().enumerate().map(|(i, &t)| if t { mu1[i] } else { mu0[i] }).collect();
        prop_assert_eq!(estimate_dr(&z, &fitted, &e, &mu0, &mu1).unwrap(), om_from_predictions(&mu0, &mu1));
        let zeros = vec![0.0; z.len()];
        prop_assert_eq!(estimate_dr(&z, &y, &e, &zeros, &zeros).unwrap(), estimate_ipw_ht(&z, &y, &e).unwrap());
    }

    #[test]
    fn normalized_weights_ignore_outcome_shift((z, y, e) in inputs(), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let tol = 1e-9 * (1.0 + c.abs() + 20.0);
        prop_assert!((estimate_ipw_hajek(&z, &y, &e).unwrap() - estimate_ipw_hajek(&z, &shifted, &e).unwrap()).abs() < tol);
        prop_assert!((estimate_ow(&z, &y, &e).unwrap() - estimate_ow(&z, &shifted, &e).unwrap()).abs() < tol);
    }

    #[test]
    fn normalized_weights_of_constant_outcome_are_zero((z, _y, e) in inputs(), c in -50.0f64..50.0) {
        let y = vec![c; z.len()];
        prop_assert!(estimate_ipw_hajek(&z, &y, &e).unwrap().abs() < 1e-10 * (1.0 + c.abs()));
        prop_assert!(estimate_ow(&z, &y, &e).unwrap().abs() < 1e-10 * (1.0 + c.abs()));
    }

    #[test]
    fn dr_is_linear_in_outcome_shift((z, y, e) in inputs(), c in -10.0f64..10.0) {
        // Shifting outcomes and both predictions together leaves DR unchanged.
        let mu0: Vec<f64> = y.iter().map(|v| 0.3 * v).collect();
        let mu1: Vec<f64> = y.iter().map(|v| 0.3 * v + 1.0).collect();
        let base = estimate_dr(&z, &y, &e, &mu0, &mu1).unwrap();
        let add = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let moved = estimate_dr(&z, &add(&y), &e, &add(&mu0), &add(&mu1)).unwrap();
        prop_assert!((base - moved).abs() < 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn trimming_retains_exactly_the_band((z, _y, e) in inputs(), delta in 0.01f64..0.45) {
        if let Ok(keep) = apply_trim(&z, &e, delta) {
            for (i, &ei) in e.iter().enumerate() {
                prop_assert_eq!(keep.contains(&i), ei >= delta && ei <= 1.0 - delta);
            }
            prop_assert!(keep.iter().any(|&i| z[i]) && keep.iter().any(|&i| !z[i]));
        }
    }

    #[test]
    fn interval_contains_its_propensity(e in 1e-12f64..1.0) {
        let l = interval_index(e);
        prop_assert!(l < N_INTERVALS);
        let (lo, hi) = interval_bounds(l);
        prop_assert!(e > lo - 1e-15 && e <= hi + 1e-15, "{} not in ({}, {}]", e, lo, hi);
    }

    #[test]
    fn tail_and_bulk_are_disjoint(e in prop::collection::vec(0.001f64..0.999, 20..200)) {
        for rule in [TailRule::Percentile, TailRule::RawThreshold] {
            let t = population_mask(&e, Population::Tail, rule);
            let b = population_mask(&e, Population::Bulk, rule);
            prop_assert!(t.iter().zip(&b).all(|(a, b)| !(a & b)));
        }
    }

    #[test]
    fn mav_bounds_absolute_mean(v in prop::collection::vec(prop::option::of(-5.0f64..5.0), 1..50)) {
        let mut acc = MeanMav::default();
        for x in &v {
            acc.push(*x);
        }
        if let (Some(m), Some(a)) = (acc.mean(), acc.mav()) {
            prop_assert!(a + 1e-12 >= m.abs());
        }
    }

    #[test]
    fn mse_decomposes(v in prop::collection::vec(-5.0f64..5.0, 2..100), tau in -2.0f64..2.0) {
        let (bias, rmse, var, _) = summarize(&v, tau);
        prop_assert!((rmse * rmse - bias * bias - var).abs() < 1e-9 * (1.0 + rmse * rmse));
    }

    #[test]
    fn replicate_streams_are_reproducible(m in any::<u64>(), s in any::<u64>(), n in 1u64..5000, r in 0u64..10_000) {
        use rand::RngCore;
        let a = derive_replicate_seed(m, s, n, r).rng().next_u64();
        let b = derive_replicate_seed(m, s, n, r).rng().next_u64();
        prop_assert_eq!(a, b);
        prop_assert_ne!(derive_replicate_seed(m, s, n, r).0, derive_replicate_seed(m, s, n, r + 1).0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn logistic_fit_satisfies_score_equations(seed in any::<u64>(), d in 0.0f64..3.0) {
        let sc = Scenario::with_intercept(0.4, d, 0.0);
        let ds = make_dataset(&sc, 300, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x = build_design(&ds.obs.x, CovariateForm::Correct).unwrap();
        let fit = fit_logistic(&x, &ds.obs.z).unwrap();
        prop_assume!(fit.converged && !fit.separated);
        for j in 0..x.ncols() {
            let score: f64 = (0..x.nrows()).map(|i| x[(i, j)] * (f64::from(u8::from(ds.obs.z[i])) - fit.e_hat[i])).sum();
            prop_assert!(score.abs() < 1e-6, "column {} score {}", j, score);
        }
        prop_assert!(fit.e_hat.iter().all(|&e| e > 0.0 && e < 1.0));
    }

    #[test]
    fn ols_residuals_are_orthogonal(seed in any::<u64>(), rows in 10usize..60, cols in 1usize..6) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-3.0..3.0));
        let y: Vec<f64> = (0..rows).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let coef = least_squares(a.clone(), &y).unwrap();
        for j in 0..cols {
            let dot: f64 = (0..rows)
                .map(|i| a[(i, j)] * (y[i] - (0..cols).map(|k| a[(i, k)] * coef[k]).sum::<f64>()))
                .sum();
            prop_assert!(dot.abs() < 1e-8);
        }
    }

    #[test]
    fn joint_outcome_predictions_differ_by_effect(seed in any::<u64>()) {
        let sc = Scenario::named("prev40_d1").unwrap();
        let ds = make_dataset(&sc, 200, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x = build_design(&ds.obs.x, CovariateForm::Correct).unwrap();
        let fit = fit_outcome(&x, &ds.obs.z, &ds.obs.y, OutcomeStructure::Joint).unwrap();
        let t = fit.treatment_coef().unwrap();
        prop_assert!(fit.mu1_hat.iter().zip(&fit.mu0_hat).all(|(a, b)| ((a - b) - t).abs() < 1e-9));
    }
}
