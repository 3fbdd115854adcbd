mod common;

use common::*;
use fimeq::approx_mdp::{build_approx_mdp, fixed_point_residual, value_iteration};
use fimeq::ergodicity::{dobrushin, estimate_l, stationary_distribution};
use fimeq::filter::{obs_predictive, window_posterior};
use fimeq::qlearning::{run_q_learning, LearnConfig};
use fimeq::{Belief, ExplorationPolicy, WindowIndexer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| random_row(rng, cols, true)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn posterior_matches_joint_enumeration(seed in any::<u64>(), n in 0usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&mut rng, 4, true);
        let prior = m.prior().as_slice().to_vec();
        let w = sample_window(&m, &prior, n, &mut rng);
        let post = window_posterior(&m, m.prior(), &w).unwrap();
        let oracle = enumerate_posterior(&m, &prior, &w).unwrap();
        prop_assert!(l1(post.as_slice(), &oracle) < 1e-10);
        let s: f64 = post.as_slice().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12 && post.as_slice().iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn predictive_gap_is_at_most_posterior_gap(seed in any::<u64>(), n in 0usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&mut rng, 4, false);
        let other = Belief::new(random_row(&mut rng, m.n_states(), true)).unwrap();
        let w = sample_window(&m, m.prior().as_slice(), n, &mut rng);
        let Ok(a) = window_posterior(&m, m.prior(), &w) else { return Ok(()); };
        let Ok(b) = window_posterior(&m, &other, &w) else { return Ok(()); };
        for u in 0..m.n_actions() {
            let pa = obs_predictive(&m, m.prior(), &w, u).unwrap();
            let pb = obs_predictive(&m, &other, &w, u).unwrap();
            prop_assert!(l1(&pa, &pb) <= l1(a.as_slice(), b.as_slice()) + 1e-12);
        }
    }

    #[test]
    fn dobrushin_in_unit_interval(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_stochastic(&mut rng, rows, cols);
        let d = dobrushin(&k);
        prop_assert!((-1e-15..=1.0 + 1e-15).contains(&d));
    }

    #[test]
    fn dobrushin_two_rows_is_one_minus_half_l1(seed in any::<u64>(), cols in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random_stochastic(&mut rng, 2, cols);
        let expected = 1.0 - 0.5 * l1(&k[0], &k[1]);
        prop_assert!((dobrushin(&k) - expected).abs() < 1e-14);
    }

    #[test]
    fn l_grows_with_grid_refinement(seed in any::<u64>(), n in 0usize..=2, res in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nx = rng.random_range(2..=3);
        let m = random_model_sized(&mut rng, nx, 2, 2, false);
        let pi = Belief::new(random_row(&mut rng, nx, false)).unwrap();
        prop_assume!(pi.has_full_support());
        let coarse = estimate_l(&m, &pi, n, res).unwrap();
        let fine = estimate_l(&m, &pi, n, 2 * res).unwrap();
        prop_assert!(fine >= coarse);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&fine));
    }

    #[test]
    fn window_codes_are_a_bijection(ny in 1usize..4, nu in 1usize..4, n in 0usize..4, pick in any::<u64>()) {
        let ix = WindowIndexer::new(ny, nu, n).unwrap();
        let code = (pick % ix.count() as u64) as usize;
        let w = ix.decode(code);
        prop_assert_eq!(ix.encode(&w).unwrap(), code);
        for y in 0..ny {
            for u in 0..nu {
                let shifted = ix.decode(ix.shift(code, y, u));
                prop_assert_eq!(shifted.obs[0], y);
                prop_assert_eq!(&shifted.obs[1..], &w.obs[..n]);
                if n > 0 {
                    prop_assert_eq!(shifted.acts[0], u);
                    prop_assert_eq!(&shifted.acts[1..], &w.acts[..n - 1]);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn value_iteration_contracts_and_is_bounded(seed in any::<u64>(), n in 0usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&mut rng, 3, false);
        let pi = Belief::new(random_row(&mut rng, m.n_states(), false)).unwrap();
        prop_assume!(pi.has_full_support());
        let mdp = build_approx_mdp(&m, &pi, n).unwrap();
        for s in mdp.reachable_states() {
            for u in 0..m.n_actions() {
                let total: f64 = mdp.successors(s, u).iter().map(|(_, p)| p).sum();
                prop_assert!((total - 1.0).abs() < 1e-10);
            }
        }
        let tol = 1e-8;
        let vi = value_iteration(&mdp, tol);
        for pair in vi.increments.windows(2) {
            prop_assert!(pair[1] <= m.discount() * pair[0] + 1e-13);
        }
        prop_assert!(fixed_point_residual(&mdp, &vi.q) < 10.0 * tol);
        let bound = m.cost_sup() / (1.0 - m.discount());
        prop_assert!(vi.values.iter().all(|v| v.abs() <= bound + 1e-12));
    }

    #[test]
    fn learning_is_deterministic_and_bounded(seed in any::<u64>(), n in 0usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&mut rng, 3, false);
        let cfg = LearnConfig {
            window_length: n,
            total_steps: 20_000,
            seed,
            exploration: ExplorationPolicy::uniform(m.n_actions()),
            snapshot_every: 1_000,
        };
        let (q, _) = run_q_learning(&m, &cfg, None).unwrap();
        prop_assert_eq!(&q, &run_q_learning(&m, &cfg, None).unwrap().0);
        if let Ok(pi) = stationary_distribution(&m, &cfg.exploration) {
            if pi.has_full_support() {
                let mdp = build_approx_mdp(&m, &pi, n).unwrap();
                let vi = value_iteration(&mdp, 1e-8);
                let a = run_q_learning(&m, &cfg, Some((&mdp, &vi.values))).unwrap();
                prop_assert_eq!(&a, &run_q_learning(&m, &cfg, Some((&mdp, &vi.values))).unwrap());
                prop_assert_eq!(&a.0, &q);
                prop_assert!(a.1.points.windows(2).all(|p| p[0].0 < p[1].0));
            }
        }
        // costs lie in [0, 1]
        let top = m.cost_sup() / (1.0 - m.discount());
        prop_assert!(q.values().iter().all(|v| (0.0..=top + 1e-12).contains(v)));
    }
}
