//! Exact evaluation of window policies on the true model, a discretized
//! belief-MDP oracle for the optimal value, and the loss/bound table.
//!
//! Every value here is anchored at time `N`: the first `N` steps follow the
//! warm-up exploration policy at no cost, and cost accrues from time `N` on
//! with unit weight on the first stage.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx_mdp::{build_approx_mdp, value_iteration, ValueIterationResult};
use crate::ergodicity::estimate_l;
use crate::error::{Error, Result};
use crate::filter::{predict, window_joint, window_posterior};
use crate::model::{Belief, ExplorationPolicy, PomdpModel, WindowIndexer, WindowPolicy};
use crate::qlearning::Simulator;
use crate::simplex::SimplexGrid;

/// Largest joint chain the exact evaluator will factorize.
pub const MAX_JOINT_STATES: usize = 4096;

/// Largest belief grid the oracle will sweep.
pub const MAX_GRID_POINTS: usize = 5_000_000;

/// Monte Carlo horizons stop once the discounted tail is below this.
pub const MC_TAIL_TOL: f64 = 1e-4;

/// `(code, P(X_N = ·, I_N = code))` for every window with positive mass.
pub fn time_n_law(
    model: &PomdpModel,
    prior: &Belief,
    window_length: usize,
    warmup: &ExplorationPolicy,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let ix = WindowIndexer::for_model(model, window_length)?;
    Ok((0..ix.count())
        .filter_map(|code| {
            let joint = window_joint(model, prior, &ix.decode(code), warmup);
            (joint.iter().sum::<f64>() > 0.0).then_some((code, joint))
        })
        .collect())
}

/// `E[Σ_{k≥N} β^{k-N} c(x_k, u_k)]` under `policy` after an exploratory
/// warm-up, starting from the model prior.
///
/// Solves `(I - βP) v = c` on the joint chain over `(x, window)` restricted
/// to the states reachable from the time-`N` law.
pub fn evaluate_window_policy(
    model: &PomdpModel,
    policy: &WindowPolicy,
    warmup: &ExplorationPolicy,
) -> Result<f64> {
    let n = policy.window_length;
    let ix = WindowIndexer::for_model(model, n)?;
    check_policy(model, policy, &ix)?;
    let nx = model.n_states();
    let law = time_n_law(model, model.prior(), n, warmup)?;

    // breadth-first over joint states x * count + code
    let mut index = vec![usize::MAX; nx * ix.count()];
    let mut order = Vec::new();
    let mut queue = VecDeque::new();
    for (code, joint) in &law {
        for (x, p) in joint.iter().enumerate() {
            if *p > 0.0 {
                let j = x * ix.count() + code;
                if index[j] == usize::MAX {
                    index[j] = order.len();
                    order.push(j);
                    queue.push_back(j);
                }
            }
        }
    }
    let mut edges: Vec<Vec<(usize, f64)>> = Vec::new();
    while let Some(j) = queue.pop_front() {
        let (x, code) = (j / ix.count(), j % ix.count());
        if !policy.assigned[code] {
            return Err(Error::PolicyGap { code });
        }
        let u = policy.action(code);
        let mut out = Vec::new();
        for (next, t) in model.transition_row(x, u).iter().enumerate() {
            if *t == 0.0 {
                continue;
            }
            for (y, o) in model.channel_row(next).iter().enumerate() {
                if *o == 0.0 {
                    continue;
                }
                let k = next * ix.count() + ix.shift(code, y, u);
                if index[k] == usize::MAX {
                    index[k] = order.len();
                    order.push(k);
                    queue.push_back(k);
                }
                out.push((k, t * o));
            }
        }
        edges.push(out);
    }
    let m = order.len();
    if m > MAX_JOINT_STATES {
        return Err(Error::Guard(format!(
            "{m} reachable joint states exceed the limit of {MAX_JOINT_STATES}"
        )));
    }

    let beta = model.discount();
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut c = DVector::<f64>::zeros(m);
    for (i, &j) in order.iter().enumerate() {
        let (x, code) = (j / ix.count(), j % ix.count());
        c[i] = model.cost(x, policy.action(code));
        for &(k, p) in &edges[i] {
            a[(i, index[k])] -= beta * p;
        }
    }
    let v = a
        .lu()
        .solve(&c)
        .ok_or_else(|| Error::Guard("singular policy evaluation system".into()))?;
    Ok(law
        .iter()
        .flat_map(|(code, joint)| {
            joint
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(x, p)| p * v[index[x * ix.count() + code]])
                .collect::<Vec<_>>()
        })
        .sum())
}

fn check_policy(model: &PomdpModel, policy: &WindowPolicy, ix: &WindowIndexer) -> Result<()> {
    if policy.len() != ix.count() || policy.assigned.len() != ix.count() {
        return Err(Error::Validation(format!(
            "policy covers {} windows, expected {}",
            policy.len(),
            ix.count()
        )));
    }
    if let Some(&u) = policy.actions.iter().find(|&&u| u >= model.n_actions()) {
        return Err(Error::IndexOutOfRange {
            what: "action",
            index: u,
            size: model.n_actions(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: u64,
    pub horizon: usize,
}

/// Smallest `h` with `β^h ‖c‖∞ / (1-β) < MC_TAIL_TOL`.
pub fn truncation_horizon(model: &PomdpModel) -> usize {
    let beta = model.discount();
    let mut tail = model.cost_sup() / (1.0 - beta);
    let mut h = 0;
    while tail >= MC_TAIL_TOL {
        tail *= beta;
        h += 1;
    }
    h
}

const MC_BLOCK: u64 = 4096;

/// Monte Carlo estimate of [`evaluate_window_policy`].
///
/// Episodes are grouped in fixed blocks; block `b` draws from ChaCha8 stream
/// `b` of `seed`, so the estimate does not depend on the thread count.
pub fn monte_carlo_policy_value(
    model: &PomdpModel,
    policy: &WindowPolicy,
    warmup: &ExplorationPolicy,
    episodes: u64,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    let n = policy.window_length;
    let ix = WindowIndexer::for_model(model, n)?;
    check_policy(model, policy, &ix)?;
    if episodes < 2 {
        return Err(Error::Config("need at least two episodes".into()));
    }
    let sim = Simulator::new(model);
    let warm = WeightedIndex::new(warmup.probs())
        .map_err(|e| Error::Validation(format!("warm-up policy: {e}")))?;
    let horizon = truncation_horizon(model);
    let beta = model.discount();
    let blocks = episodes.div_ceil(MC_BLOCK);

    let (sum, sum_sq) = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let count = MC_BLOCK.min(episodes - b * MC_BLOCK);
            let mut acc = (0.0, 0.0);
            for _ in 0..count {
                let (mut x, y0) = sim.initial(&mut rng);
                let mut obs = vec![y0];
                let mut acts = Vec::with_capacity(n);
                for _ in 0..n {
                    let u = warm.sample(&mut rng);
                    let (next, y, _) = sim.step(x, u, &mut rng);
                    x = next;
                    obs.insert(0, y);
                    acts.insert(0, u);
                }
                let mut code = ix.encode(&crate::model::WindowState { obs, acts })?;
                let mut total = 0.0;
                let mut weight = 1.0;
                for _ in 0..horizon {
                    if !policy.assigned[code] {
                        return Err(Error::PolicyGap { code });
                    }
                    let u = policy.action(code);
                    let (next, y, cost) = sim.step(x, u, &mut rng);
                    total += weight * cost;
                    weight *= beta;
                    x = next;
                    code = ix.shift(code, y, u);
                }
                acc.0 += total;
                acc.1 += total * total;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let k = episodes as f64;
    let mean = sum / k;
    let var = ((sum_sq - k * mean * mean) / (k - 1.0)).max(0.0);
    Ok(MonteCarloEstimate {
        mean,
        std_error: (var / k).sqrt(),
        episodes,
        horizon,
    })
}

/// Optimal values of the belief-MDP on a uniform simplex grid.
///
/// Beliefs are filter posteriors (after the current observation). Bayes
/// successors are projected to the nearest grid point.
#[derive(Debug, Clone)]
pub struct BeliefGridSolution {
    grid: SimplexGrid,
    values: Vec<f64>,
    pub sweeps: usize,
}

impl BeliefGridSolution {
    pub fn grid(&self) -> &SimplexGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `V*` at the grid point nearest `belief`.
    pub fn value_at(&self, belief: &Belief) -> f64 {
        self.values[self.grid.nearest(belief.as_slice())]
    }

    /// `E[V*(z_N)]` for the time-`N` posterior after an exploratory warm-up
    /// from `prior`.
    pub fn expected_value_after(
        &self,
        model: &PomdpModel,
        prior: &Belief,
        window_length: usize,
        warmup: &ExplorationPolicy,
    ) -> Result<f64> {
        Ok(time_n_law(model, prior, window_length, warmup)?
            .into_iter()
            .map(|(_, joint)| {
                let mass: f64 = joint.iter().sum();
                mass * self.value_at(&Belief::from_weights(joint).expect("positive mass"))
            })
            .sum())
    }
}

/// Value iteration on the belief simplex with `bins` points per coordinate
/// (grid resolution `bins - 1`), to sup error `tol`.
pub fn solve_belief_grid(model: &PomdpModel, bins: usize, tol: f64) -> Result<BeliefGridSolution> {
    let nx = model.n_states();
    if nx > 3 {
        return Err(Error::Guard(format!(
            "belief grid oracle supports at most 3 states, model has {nx}"
        )));
    }
    if bins < 2 {
        return Err(Error::Config("bins must be at least 2".into()));
    }
    let grid = SimplexGrid::new(nx, bins - 1);
    if grid.len() > MAX_GRID_POINTS {
        return Err(Error::Guard(format!(
            "{} grid points exceed the limit of {MAX_GRID_POINTS}",
            grid.len()
        )));
    }
    let nu = model.n_actions();
    let ny = model.n_observations();
    let beta = model.discount();

    // per (point, action): stage cost and projected successors
    let table: Vec<(f64, Vec<(usize, f64)>)> = (0..grid.len() * nu)
        .into_par_iter()
        .map(|i| {
            let (z, u) = (grid.point(i / nu), i % nu);
            let cost = z
                .as_slice()
                .iter()
                .enumerate()
                .map(|(x, p)| p * model.cost(x, u))
                .sum();
            let pred = predict(model, &z, u);
            let succ = (0..ny)
                .filter_map(|y| {
                    let w: Vec<f64> = pred
                        .as_slice()
                        .iter()
                        .enumerate()
                        .map(|(x, p)| p * model.channel(x, y))
                        .collect();
                    let py: f64 = w.iter().sum();
                    (py > 0.0).then(|| {
                        let post: Vec<f64> = w.iter().map(|v| v / py).collect();
                        (grid.nearest(&post), py)
                    })
                })
                .collect();
            (cost, succ)
        })
        .collect();

    let threshold = tol * (1.0 - beta) / (2.0 * beta);
    let mut values = vec![0.0; grid.len()];
    let mut sweeps = 0;
    while sweeps < crate::approx_mdp::MAX_SWEEPS {
        let next: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|p| {
                (0..nu)
                    .map(|u| {
                        let (cost, succ) = &table[p * nu + u];
                        cost + beta * succ.iter().map(|&(s, w)| w * values[s]).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let delta = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        sweeps += 1;
        if delta < threshold {
            break;
        }
    }
    Ok(BeliefGridSolution {
        grid,
        values,
        sweeps,
    })
}

/// Grid estimate of `J*_β(μ)` with its refinement check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefGridValue {
    pub bins: usize,
    pub value: f64,
    pub refined_bins: usize,
    pub refined_value: f64,
    pub refinement_delta: f64,
}

/// Tolerance for the grid value iterations.
pub const GRID_VI_TOL: f64 = 1e-9;

/// `J*_β(μ) = Σ_y P(y) V*(update(μ, y))` on grids with `bins` and
/// `2 bins - 1` points per coordinate.
pub fn belief_grid_optimal(
    model: &PomdpModel,
    mu: &Belief,
    bins: usize,
) -> Result<BeliefGridValue> {
    let warm = ExplorationPolicy::uniform(model.n_actions());
    let coarse = solve_belief_grid(model, bins, GRID_VI_TOL)?;
    let refined_bins = 2 * bins - 1;
    let fine = solve_belief_grid(model, refined_bins, GRID_VI_TOL)?;
    let value = coarse.expected_value_after(model, mu, 0, &warm)?;
    let refined_value = fine.expected_value_after(model, mu, 0, &warm)?;
    Ok(BeliefGridValue {
        bins,
        value,
        refined_bins,
        refined_value,
        refinement_delta: (value - refined_value).abs(),
    })
}

/// `2 ‖c‖∞ L / (1-β)²`
pub fn robustness_bound(cost_sup: f64, discount: f64, l: f64) -> f64 {
    2.0 * cost_sup * l / (1.0 - discount).powi(2)
}

/// `‖c‖∞ L / (1-β)²`
pub fn value_bound(cost_sup: f64, discount: f64, l: f64) -> f64 {
    cost_sup * l / (1.0 - discount).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: usize,
    /// `J_β(μ, γ^N) - J*_est`
    pub loss: f64,
    pub l: f64,
    pub bound_robust: f64,
    pub bound_value: f64,
    /// `J_β(μ, γ^N)` of the value-iteration policy.
    pub policy_value: f64,
    /// `E[V*(z_N)]` from the finer belief grid.
    pub j_star_est: f64,
    /// `|E[V*(z_N)]|` difference between the two grids.
    pub grid_delta: f64,
    /// `max |J^N_β(π*, I) - V*(ψ(μ, I))|` over windows realized at time `N`.
    pub max_value_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    pub warmup: ExplorationPolicy,
    pub bins: usize,
    pub l_resolution: usize,
    pub vi_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub grid: BeliefGridValue,
    /// `min_N J_β(μ, γ^N)` over the computed window lengths.
    pub surrogate_baseline: f64,
}

/// Loss and bound table for each window length in `window_lengths`.
pub fn bound_report(
    model: &PomdpModel,
    pi_star: &Belief,
    window_lengths: &[usize],
    opts: &BoundOptions,
) -> Result<BoundReport> {
    if window_lengths.is_empty() {
        return Err(Error::Config("no window lengths requested".into()));
    }
    let mu = model.prior();
    let coarse = solve_belief_grid(model, opts.bins, GRID_VI_TOL)?;
    let fine = solve_belief_grid(model, 2 * opts.bins - 1, GRID_VI_TOL)?;
    let solutions: Vec<ValueIterationResult> = window_lengths
        .par_iter()
        .map(|&n| {
            Ok(value_iteration(
                &build_approx_mdp(model, pi_star, n)?,
                opts.vi_tol,
            ))
        })
        .collect::<Result<_>>()?;

    let rows = window_lengths
        .par_iter()
        .zip(&solutions)
        .map(|(&n, vi)| {
            let policy_value = evaluate_window_policy(model, &vi.policy, &opts.warmup)?;
            let j_star_est = fine.expected_value_after(model, mu, n, &opts.warmup)?;
            let j_coarse = coarse.expected_value_after(model, mu, n, &opts.warmup)?;
            let l = estimate_l(model, pi_star, n, opts.l_resolution)?;
            let ix = WindowIndexer::for_model(model, n)?;
            let max_value_gap = time_n_law(model, mu, n, &opts.warmup)?
                .into_iter()
                .map(|(code, _)| {
                    let z = window_posterior(model, mu, &ix.decode(code))?;
                    Ok((vi.values[code] - fine.value_at(&z)).abs())
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            Ok(BoundRow {
                n,
                loss: policy_value - j_star_est,
                l,
                bound_robust: robustness_bound(model.cost_sup(), model.discount(), l),
                bound_value: value_bound(model.cost_sup(), model.discount(), l),
                policy_value,
                j_star_est,
                grid_delta: (j_star_est - j_coarse).abs(),
                max_value_gap,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let warm0 = ExplorationPolicy::uniform(model.n_actions());
    let value = coarse.expected_value_after(model, mu, 0, &warm0)?;
    let refined_value = fine.expected_value_after(model, mu, 0, &warm0)?;
    let grid = BeliefGridValue {
        bins: opts.bins,
        value,
        refined_bins: 2 * opts.bins - 1,
        refined_value,
        refinement_delta: (value - refined_value).abs(),
    };
    let surrogate_baseline = rows
        .iter()
        .map(|r| r.policy_value)
        .fold(f64::INFINITY, f64::min);
    Ok(BoundReport {
        rows,
        grid,
        surrogate_baseline,
    })
}

impl BoundReport {
    /// CSV with columns `N,loss,L,bound_robust,bound_value`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "loss", "L", "bound_robust", "bound_value"])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                format!("{:e}", r.loss),
                format!("{:e}", r.l),
                format!("{:e}", r.bound_robust),
                format!("{:e}", r.bound_value),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(&mut file)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}
