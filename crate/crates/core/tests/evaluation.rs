mod common;

use approx::assert_abs_diff_eq;
use common::*;
use fimeq::approx_mdp::{build_approx_mdp, value_iteration};
use fimeq::evaluation::{
    belief_grid_optimal, bound_report, evaluate_window_policy, monte_carlo_policy_value,
    solve_belief_grid, BoundOptions, GRID_VI_TOL,
};
use fimeq::{Belief, ExplorationPolicy, WindowIndexer, WindowPolicy};

const GRID_TOL: f64 = 1e-3;

#[test]
fn repair3_policy_value_matches_monte_carlo() {
    let m = bundled("machine_repair_3.json");
    let vi = value_iteration(&build_approx_mdp(&m, &Belief::uniform(2), 1).unwrap(), 1e-9);
    let sigma = ExplorationPolicy::uniform(2);
    let exact = evaluate_window_policy(&m, &vi.policy, &sigma).unwrap();
    let mc = monte_carlo_policy_value(&m, &vi.policy, &sigma, 1_000_000, 17).unwrap();
    assert!(
        (exact - mc.mean).abs() < 3.0 * mc.std_error,
        "exact {exact} mc {} se {}",
        mc.mean,
        mc.std_error
    );
}

#[test]
fn perfect_channel_grid_matches_state_mdp() {
    let m = bundled("machine_repair_3_perfect.json");
    let v = mdp_values(&m, 1e-12);
    let mu = m.prior();
    let g = belief_grid_optimal(&m, mu, 101).unwrap();
    let exact: f64 = (0..2).map(|x| mu[x] * v[x]).sum();
    assert_abs_diff_eq!(g.value, exact, epsilon = 1e-6);
    assert_abs_diff_eq!(g.refined_value, exact, epsilon = 1e-6);
}

#[test]
fn repair3_grid_refinement_and_lower_bound() {
    let m = bundled("machine_repair_3.json");
    let g = belief_grid_optimal(&m, m.prior(), 2001).unwrap();
    assert_eq!(g.refined_bins, 4001);
    assert!(g.refinement_delta < GRID_TOL, "{g:?}");

    let sigma = ExplorationPolicy::uniform(2);
    let fine = solve_belief_grid(&m, 4001, GRID_VI_TOL).unwrap();
    for n in 0..=3 {
        let j_star = fine.expected_value_after(&m, m.prior(), n, &sigma).unwrap();
        let vi = value_iteration(&build_approx_mdp(&m, &Belief::uniform(2), n).unwrap(), 1e-9);
        let count = WindowIndexer::for_model(&m, n).unwrap().count();
        let mut policies = vec![vi.policy];
        for u in 0..2 {
            policies.push(WindowPolicy::new(n, vec![u; count]));
        }
        // repair iff the newest observation reads broken
        policies.push(WindowPolicy::new(
            n,
            (0..count)
                .map(|c| (c / (count / 2) == 0) as usize)
                .collect(),
        ));
        for p in &policies {
            let v = evaluate_window_policy(&m, p, &sigma).unwrap();
            assert!(j_star <= v + GRID_TOL, "N={n}: {j_star} > {v}");
        }
    }
}

#[test]
fn perfect_channel_bounds_vanish() {
    let m = bundled("machine_repair_3_perfect.json");
    let opts = BoundOptions {
        warmup: ExplorationPolicy::uniform(2),
        bins: 201,
        l_resolution: 100,
        vi_tol: 1e-9,
    };
    let report = bound_report(&m, &Belief::uniform(2), &[0, 1, 2], &opts).unwrap();
    for r in &report.rows {
        assert_eq!(r.l, 0.0);
        assert_eq!(r.bound_robust, 0.0);
        assert_eq!(r.bound_value, 0.0);
        assert!(r.loss.abs() <= GRID_TOL, "{r:?}");
    }
}
