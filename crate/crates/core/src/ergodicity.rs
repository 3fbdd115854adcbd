//! Stationary analysis under exploration, Dobrushin coefficients and the
//! loss constant `L`.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::window_posterior;
use crate::model::{tv_distance, Belief, ExplorationPolicy, PomdpModel, WindowIndexer};
use crate::simplex::SimplexGrid;

/// Tolerance and step budget of the power-iteration cross-check.
pub const POWER_TOL: f64 = 1e-13;
pub const POWER_MAX_STEPS: usize = 1_000_000;

/// Default simplex grid resolution used for `L`.
pub const DEFAULT_L_RESOLUTION: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub pi_star: Belief,
    /// `pi_star` has no zero entry.
    pub pi_star_positive: bool,
    /// `|pi_linear - pi_power|_1`.
    pub power_iteration_gap: f64,
    pub delta_t: f64,
    pub delta_o: f64,
    pub alpha: f64,
    pub l_resolution: usize,
    /// `L` per window length, stored as an L¹ distance (range `[0, 2]`).
    pub l_by_n: BTreeMap<usize, f64>,
}

/// `P[x][x'] = Σ_u σ_u T[x][u][x']`.
pub fn averaged_chain(model: &PomdpModel, policy: &ExplorationPolicy) -> Vec<Vec<f64>> {
    let nx = model.n_states();
    (0..nx)
        .map(|x| {
            let mut row = vec![0.0; nx];
            for u in 0..model.n_actions() {
                let s = policy.prob(u);
                for (r, t) in row.iter_mut().zip(model.transition_row(x, u)) {
                    *r += s * t;
                }
            }
            row
        })
        .collect()
}

/// Number of closed communicating classes of a stochastic matrix.
pub fn recurrent_class_count(chain: &[Vec<f64>]) -> usize {
    let n = chain.len();
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|s| {
            let mut seen = vec![false; n];
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(i) = queue.pop_front() {
                for (j, &p) in chain[i].iter().enumerate() {
                    if p > 0.0 && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            seen
        })
        .collect();
    // i is recurrent iff everything it reaches reaches back
    let recurrent: Vec<bool> = (0..n)
        .map(|i| (0..n).all(|j| !reach[i][j] || reach[j][i]))
        .collect();
    let mut assigned = vec![false; n];
    let mut classes = 0;
    for i in 0..n {
        if recurrent[i] && !assigned[i] {
            classes += 1;
            for j in 0..n {
                if reach[i][j] {
                    assigned[j] = true;
                }
            }
        }
    }
    classes
}

fn check_unique(chain: &[Vec<f64>]) -> Result<()> {
    match recurrent_class_count(chain) {
        1 => Ok(()),
        classes => Err(Error::NonUniqueInvariant { classes }),
    }
}

/// `|πP - π|_1`.
pub fn stationary_residual(chain: &[Vec<f64>], pi: &[f64]) -> f64 {
    let n = chain.len();
    (0..n)
        .map(|j| {
            let flow: f64 = (0..n).map(|i| pi[i] * chain[i][j]).sum();
            (flow - pi[j]).abs()
        })
        .sum()
}

fn solve_balance(chain: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = chain.len();
    // (P^T - I) π = 0 with the last balance row replaced by Σ π = 1
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] = chain[i][j];
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut x = lu.solve(&b)?;
    // one step of iterative refinement
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Some(x.iter().map(|v| v.max(0.0)).collect())
}

/// Invariant law of the hidden chain under the exploration policy.
///
/// Solved directly from the balance equations; fails when the averaged chain
/// has more than one recurrent class.
pub fn stationary_distribution(model: &PomdpModel, policy: &ExplorationPolicy) -> Result<Belief> {
    let chain = averaged_chain(model, policy);
    check_unique(&chain)?;
    let pi = solve_balance(&chain).ok_or_else(|| Error::Guard("singular balance system".into()))?;
    Belief::from_weights(pi).ok_or_else(|| Error::Guard("balance solve returned zero mass".into()))
}

/// Power iteration on the lazy chain `(I + P) / 2`, which shares the
/// invariant law of `P` and is aperiodic.
pub fn stationary_by_power_iteration(
    model: &PomdpModel,
    policy: &ExplorationPolicy,
) -> Result<Belief> {
    let chain = averaged_chain(model, policy);
    check_unique(&chain)?;
    let n = chain.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..POWER_MAX_STEPS {
        let mut next = vec![0.0; n];
        for i in 0..n {
            next[i] += 0.5 * pi[i];
            for j in 0..n {
                next[j] += 0.5 * pi[i] * chain[i][j];
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let diff = tv_distance(&next, &pi);
        pi = next;
        if diff < POWER_TOL {
            return Ok(Belief::from_weights(pi).expect("positive mass"));
        }
    }
    Err(Error::Guard(format!(
        "power iteration did not reach {POWER_TOL} in {POWER_MAX_STEPS} steps"
    )))
}

/// Every entry strictly positive.
pub fn positivity_check(pi_star: &Belief) -> bool {
    pi_star.has_full_support()
}

/// `δ(K) = min over row pairs of Σ_j min(K[x][j], K[y][j])`.
///
/// A single-row kernel has coefficient 1.
pub fn dobrushin(kernel: &[Vec<f64>]) -> f64 {
    let mut best = 1.0_f64;
    for (i, a) in kernel.iter().enumerate() {
        for b in &kernel[i + 1..] {
            let overlap: f64 = a.iter().zip(b).map(|(p, q)| p.min(*q)).sum();
            best = best.min(overlap);
        }
    }
    best.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaCoefficient {
    /// `min_u δ(T(·|·,u))`
    pub delta_t: f64,
    pub delta_o: f64,
    /// `(1 - delta_t) (2 - delta_o)`
    pub alpha: f64,
}

pub fn alpha_coefficient(model: &PomdpModel) -> AlphaCoefficient {
    let delta_t = (0..model.n_actions())
        .map(|u| dobrushin(&model.transition_matrix(u)))
        .fold(1.0_f64, f64::min);
    let delta_o = dobrushin(&model.channel_matrix());
    AlphaCoefficient {
        delta_t,
        delta_o,
        alpha: (1.0 - delta_t) * (2.0 - delta_o),
    }
}

/// Largest L¹ distance between window posteriors started from any of
/// `priors` and from `pi_star`. Windows impossible under either prior are
/// skipped.
pub fn estimate_l_over_priors(
    model: &PomdpModel,
    pi_star: &Belief,
    window_length: usize,
    priors: &[Belief],
) -> Result<f64> {
    if !pi_star.has_full_support() {
        return Err(Error::Guard(
            "L requires a reference prior with full support".into(),
        ));
    }
    let ix = WindowIndexer::for_model(model, window_length)?;
    let worst = (0..ix.count())
        .into_par_iter()
        .map(|code| {
            let w = ix.decode(code);
            let Ok(reference) = window_posterior(model, pi_star, &w) else {
                return 0.0;
            };
            priors
                .iter()
                .filter_map(|p| window_posterior(model, p, &w).ok())
                .map(|post| tv_distance(post.as_slice(), reference.as_slice()))
                .fold(0.0_f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// `L` for window length `N`, maximized over a uniform simplex grid of the
/// given resolution (vertices included).
pub fn estimate_l(
    model: &PomdpModel,
    pi_star: &Belief,
    window_length: usize,
    grid_resolution: usize,
) -> Result<f64> {
    let priors = SimplexGrid::new(model.n_states(), grid_resolution).points();
    estimate_l_over_priors(model, pi_star, window_length, &priors)
}

/// Stationary law, Dobrushin coefficients and `L(N)` for each requested `N`.
pub fn stability_report(
    model: &PomdpModel,
    policy: &ExplorationPolicy,
    window_lengths: &[usize],
    grid_resolution: usize,
) -> Result<StabilityReport> {
    let pi_star = stationary_distribution(model, policy)?;
    let power = stationary_by_power_iteration(model, policy)?;
    let coeff = alpha_coefficient(model);
    let mut l_by_n = BTreeMap::new();
    for &n in window_lengths {
        l_by_n.insert(n, estimate_l(model, &pi_star, n, grid_resolution)?);
    }
    Ok(StabilityReport {
        pi_star_positive: positivity_check(&pi_star),
        power_iteration_gap: tv_distance(pi_star.as_slice(), power.as_slice()),
        pi_star,
        delta_t: coeff.delta_t,
        delta_o: coeff.delta_o,
        alpha: coeff.alpha,
        l_resolution: grid_resolution,
        l_by_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelFile;
    use approx::assert_abs_diff_eq;

    fn model(transition: Vec<Vec<Vec<f64>>>, channel: Vec<Vec<f64>>) -> PomdpModel {
        let nx = channel.len();
        let nu = transition[0].len();
        let ny = channel[0].len();
        PomdpModel::from_file(ModelFile {
            states: (0..nx).map(|i| format!("x{i}")).collect(),
            actions: (0..nu).map(|i| format!("u{i}")).collect(),
            observations: (0..ny).map(|i| format!("y{i}")).collect(),
            transition,
            channel,
            cost: vec![vec![1.0; nu]; nx],
            discount: 0.8,
            prior: vec![1.0 / nx as f64; nx],
        })
        .unwrap()
    }

    fn repair3() -> PomdpModel {
        model(
            vec![
                vec![vec![0.9, 0.1], vec![0.6, 0.4]],
                vec![vec![0.4, 0.6], vec![0.1, 0.9]],
            ],
            vec![vec![0.7, 0.3], vec![0.3, 0.7]],
        )
    }

    #[test]
    fn dobrushin_worked_example() {
        let k = vec![
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            vec![0.0, 0.5, 0.5],
            vec![0.75, 0.0, 0.25],
        ];
        assert_abs_diff_eq!(dobrushin(&k), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn dobrushin_extremes() {
        assert_eq!(dobrushin(&[vec![0.2, 0.8], vec![0.2, 0.8]]), 1.0);
        assert_eq!(dobrushin(&[vec![1.0, 0.0], vec![0.0, 1.0]]), 0.0);
    }

    #[test]
    fn alpha_repair3() {
        let a = alpha_coefficient(&repair3());
        assert_abs_diff_eq!(a.delta_t, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(a.delta_o, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(a.alpha, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn alpha_extremes() {
        let mixing = model(
            vec![
                vec![vec![0.3, 0.7], vec![0.5, 0.5]],
                vec![vec![0.3, 0.7], vec![0.5, 0.5]],
            ],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        assert_eq!(alpha_coefficient(&mixing).alpha, 0.0);
        let identity = model(
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        assert_eq!(alpha_coefficient(&identity).alpha, 2.0);
    }

    #[test]
    fn doubly_stochastic_is_uniform() {
        let m = model(
            vec![
                vec![vec![0.2, 0.5, 0.3]],
                vec![vec![0.5, 0.3, 0.2]],
                vec![vec![0.3, 0.2, 0.5]],
            ],
            vec![vec![1.0], vec![1.0], vec![1.0]],
        );
        let pi = stationary_distribution(&m, &ExplorationPolicy::uniform(1)).unwrap();
        for p in pi.as_slice() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn repair3_stationary_two_ways() {
        let m = repair3();
        let policy = ExplorationPolicy::uniform(2);
        let lin = stationary_distribution(&m, &policy).unwrap();
        let pow = stationary_by_power_iteration(&m, &policy).unwrap();
        assert!(tv_distance(lin.as_slice(), pow.as_slice()) < 1e-10);
        assert_abs_diff_eq!(lin[0], 0.5, epsilon = 1e-12);
        assert!(stationary_residual(&averaged_chain(&m, &policy), lin.as_slice()) < 1e-12);
        assert!(positivity_check(&lin));
    }

    #[test]
    fn periodic_chain_handled() {
        let m = model(
            vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            vec![vec![1.0], vec![1.0]],
        );
        let policy = ExplorationPolicy::uniform(1);
        let pow = stationary_by_power_iteration(&m, &policy).unwrap();
        assert_abs_diff_eq!(pow[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn identity_chain_not_unique() {
        let m = model(
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![1.0], vec![1.0]],
        );
        assert!(matches!(
            stationary_distribution(&m, &ExplorationPolicy::uniform(1)),
            Err(Error::NonUniqueInvariant { classes: 2 })
        ));
    }

    #[test]
    fn transient_states_allowed() {
        // state 0 leaks into the closed class {1, 2}
        let chain = vec![
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.0, 0.5, 0.5],
        ];
        assert_eq!(recurrent_class_count(&chain), 1);
    }

    #[test]
    fn positivity() {
        assert!(positivity_check(&Belief::uniform(2)));
        assert!(!positivity_check(&Belief::dirac(2, 0)));
    }

    #[test]
    fn l_vanishes_with_perfect_observation() {
        let m = model(
            vec![
                vec![vec![0.9, 0.1], vec![0.6, 0.4]],
                vec![vec![0.4, 0.6], vec![0.1, 0.9]],
            ],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        let pi = Belief::uniform(2);
        for n in 0..3 {
            assert_eq!(estimate_l(&m, &pi, n, 20).unwrap(), 0.0);
        }
    }

    #[test]
    fn l_over_reference_only_is_zero() {
        let m = repair3();
        let pi = Belief::uniform(2);
        assert_eq!(
            estimate_l_over_priors(&m, &pi, 2, std::slice::from_ref(&pi)).unwrap(),
            0.0
        );
    }

    #[test]
    fn l_requires_full_support() {
        assert!(estimate_l(&repair3(), &Belief::dirac(2, 0), 1, 10).is_err());
    }
}
