//! Seed-driven property tests for the GBS and GJMLS layers.

mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;

use jmls_realize::gbs::{
    associated_representation, exact_tee_diagonal, innovation_realization, lyapunov_residual, solve_state_covariance_direct,
    solve_state_covariance_iterative, GbsModel, RiccatiOptions,
};
use jmls_realize::jmls::{gbs_from_gjmls, gjmls_from_gbs, gjmls_obs, gjmls_reach, Layout};
use jmls_realize::linalg::{relative_diff, spectral_radius, Mat};
use jmls_realize::repr::{is_observable, is_reachable, reduce_minimal, stability_radius};
use jmls_realize::words::AdmissibleLanguage;

const TOL: f64 = 1e-8;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn direct_and_iterative_lyapunov_agree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, d) = (r.random_range(1..=4), r.random_range(1..=3));
        let w = random_weights(&mut r, d, false);
        let lang = random_language(&mut r, d);
        let g = random_gbs(&mut r, n, d, 1, 2, w, lang, 0.7);
        let a = solve_state_covariance_direct(&g).unwrap();
        let b = solve_state_covariance_iterative(&g, 1e-14, 1_000_000).unwrap();
        prop_assert!(lyapunov_residual(&g, &a) <= 1e-10);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(relative_diff(x, y) <= 1e-10);
        }
    }

    #[test]
    fn innovation_form_is_a_fixed_point(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, d, p) = (r.random_range(1..=3), r.random_range(1..=2), r.random_range(1..=2));
        let w = random_weights(&mut r, d, false);
        let base = random_gbs(&mut r, n, d, p, p, w, AdmissibleLanguage::full(d), 0.5);
        let k: Vec<Mat> = base.k().iter().map(|k| k * 0.2).collect();
        let g = GbsModel::new(base.alphabet().clone(), base.a().to_vec(), k, base.c().clone(), Mat::identity(p, p),
            base.weights().clone(), base.q().to_vec(), base.language().clone()).unwrap();
        let inv: Vec<Mat> = g.a().iter().zip(g.k()).map(|(a, k)| a - k * g.c()).collect();
        prop_assume!(stability_radius(&inv, Some(g.weights())) < 0.9);
        let rep = associated_representation(&g).unwrap();
        let pc = solve_state_covariance_direct(&g).unwrap();
        let t = exact_tee_diagonal(&g, &pc);
        let got = innovation_realization(&rep, &t, g.weights(), g.language(), RiccatiOptions::default()).unwrap();
        for s in 0..d {
            prop_assert!(relative_diff(&got.a[s], &g.a()[s]) <= 1e-7);
            prop_assert!(relative_diff(&got.k[s], &g.k()[s]) <= 1e-7);
        }
        prop_assert!(relative_diff(&got.c, g.c()) <= 1e-7);
    }

    #[test]
    fn chain_stationary_is_invariant(seed in any::<u64>(), d in 1usize..5) {
        let mut r = rng(seed);
        let chain = random_chain(&mut r, d);
        let pi = Mat::from_row_slice(1, d, chain.stationary());
        let moved = &pi * chain.transition();
        prop_assert!((moved - &pi).amax() <= 1e-12);
        prop_assert!((pi.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(pi.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn gjmls_structure_transfers_to_gbs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(2..=3);
        let dims: Vec<usize> = (0..d).map(|_| r.random_range(1..=2)).collect();
        let h = random_gjmls(&mut r, d, dims, 1, 1, 0.7);
        let (g, _) = gbs_from_gjmls(&h).unwrap();

        // same mean-square stability radius
        let rho = spectral_radius(&jmls_realize::jmls::jmls_stability_matrix(&h));
        prop_assert!((rho - g.stability_radius()).abs() <= 1e-10);
        prop_assert!(g.structural_zero_violations(1e-14).is_empty());

        // reachability and observability match the associated representation
        let rep = associated_representation(&g).unwrap();
        let (_, reach) = gjmls_reach(&h, TOL).unwrap();
        let (_, obs) = gjmls_obs(&h, TOL);
        prop_assert_eq!(reach, is_reachable(&rep, TOL));
        prop_assert_eq!(obs, is_observable(&rep, TOL));

        // back-conversion has the dimension of the minimal reduction
        if reach && obs {
            let back = gjmls_from_gbs(&g, h.chain(), Layout::Stacked, TOL).unwrap();
            prop_assert_eq!(back.total_dim(), reduce_minimal(&rep, TOL).dim());
        }
    }
}
