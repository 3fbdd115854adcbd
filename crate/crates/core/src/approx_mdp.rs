//! The finite approximate belief-MDP on windows with the predictor frozen at
//! `pi_star`, and its exact solution by value iteration.
//!
//! From window `I` under action `u` the only possible successors are the
//! shifted windows `(y', I, u)`; the probability of `y'` is the observation
//! predictive of `I` started from `pi_star`. Stage cost is the expected cost
//! under the window posterior.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{observation_distribution, predict, window_posterior};
use crate::model::{Belief, PomdpModel, WindowIndexer, WindowPolicy};

/// Largest window space the solver accepts.
pub const MAX_WINDOW_STATES: usize = 10_000_000;

/// Iteration cap for [`value_iteration`]; reached only when `tol` is below
/// floating-point resolution of the values.
pub const MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone)]
pub struct FiniteMdp {
    indexer: WindowIndexer,
    n_actions: usize,
    discount: f64,
    cost_sup: f64,
    /// `ĉ[s * |U| + u]`
    cost: Vec<f64>,
    /// successor lists per `s * |U| + u`
    successors: Vec<Vec<(usize, f64)>>,
    reachable: Vec<bool>,
}

impl FiniteMdp {
    pub fn n_states(&self) -> usize {
        self.indexer.count()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn indexer(&self) -> &WindowIndexer {
        &self.indexer
    }

    pub fn window_length(&self) -> usize {
        self.indexer.window_length()
    }

    /// `‖c‖∞` of the underlying model.
    pub fn cost_sup(&self) -> f64 {
        self.cost_sup
    }

    pub fn cost(&self, s: usize, u: usize) -> f64 {
        self.cost[s * self.n_actions + u]
    }

    /// Nonzero entries of `P*(· | s, u)`.
    pub fn successors(&self, s: usize, u: usize) -> &[(usize, f64)] {
        &self.successors[s * self.n_actions + u]
    }

    /// `P*(next | s, u)`.
    pub fn kernel(&self, s: usize, u: usize, next: usize) -> f64 {
        self.successors(s, u)
            .iter()
            .find(|(t, _)| *t == next)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn is_reachable(&self, s: usize) -> bool {
        self.reachable[s]
    }

    pub fn reachable(&self) -> &[bool] {
        &self.reachable
    }

    pub fn reachable_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states()).filter(|&s| self.reachable[s])
    }

    fn q_backup(&self, s: usize, u: usize, values: &[f64]) -> f64 {
        let future: f64 = self
            .successors(s, u)
            .iter()
            .map(|&(t, p)| p * values[t])
            .sum();
        self.cost(s, u) + self.discount * future
    }
}

/// Builds the approximate MDP for window length `N` around `pi_star`.
///
/// Windows with zero probability under `pi_star` are marked unreachable and
/// get no transitions.
pub fn build_approx_mdp(
    model: &PomdpModel,
    pi_star: &Belief,
    window_length: usize,
) -> Result<FiniteMdp> {
    if !pi_star.has_full_support() {
        return Err(Error::Guard(
            "approximate MDP requires pi_star with full support".into(),
        ));
    }
    let indexer = WindowIndexer::for_model(model, window_length)?;
    if indexer.count() > MAX_WINDOW_STATES {
        return Err(Error::Guard(format!(
            "{} window states exceed the limit of {MAX_WINDOW_STATES}",
            indexer.count()
        )));
    }
    let nu = model.n_actions();
    type Row = Option<(Vec<f64>, Vec<Vec<(usize, f64)>>)>;
    let rows: Vec<Row> = (0..indexer.count())
        .into_par_iter()
        .map(|code| {
            let w = indexer.decode(code);
            let posterior = match window_posterior(model, pi_star, &w) {
                Ok(p) => p,
                Err(Error::ZeroProbabilityWindow) => return Ok(None),
                Err(e) => return Err(e),
            };
            let mut costs = Vec::with_capacity(nu);
            let mut succ = Vec::with_capacity(nu);
            for u in 0..nu {
                costs.push(
                    posterior
                        .as_slice()
                        .iter()
                        .enumerate()
                        .map(|(x, p)| p * model.cost(x, u))
                        .sum(),
                );
                let pred = observation_distribution(model, &predict(model, &posterior, u));
                succ.push(
                    pred.iter()
                        .enumerate()
                        .filter(|(_, p)| **p > 0.0)
                        .map(|(y, p)| (indexer.shift(code, y, u), *p))
                        .collect(),
                );
            }
            Ok(Some((costs, succ)))
        })
        .collect::<Result<_>>()?;

    let mut cost = Vec::with_capacity(indexer.count() * nu);
    let mut successors = Vec::with_capacity(indexer.count() * nu);
    let mut reachable = Vec::with_capacity(indexer.count());
    for row in rows {
        match row {
            Some((c, s)) => {
                cost.extend(c);
                successors.extend(s);
                reachable.push(true);
            }
            None => {
                cost.extend(std::iter::repeat_n(0.0, nu));
                successors.extend(std::iter::repeat_with(Vec::new).take(nu));
                reachable.push(false);
            }
        }
    }
    Ok(FiniteMdp {
        indexer,
        n_actions: nu,
        discount: model.discount(),
        cost_sup: model.cost_sup(),
        cost,
        successors,
        reachable,
    })
}

/// Q-values over window codes, with per-pair visit counts for learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    visits: Vec<u64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
            visits: vec![0; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, u: usize) -> f64 {
        self.values[s * self.n_actions + u]
    }

    pub fn set(&mut self, s: usize, u: usize, v: f64) {
        self.values[s * self.n_actions + u] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn visits(&self, s: usize, u: usize) -> u64 {
        self.visits[s * self.n_actions + u]
    }

    /// Visits summed over actions.
    pub fn state_visits(&self, s: usize) -> u64 {
        self.visits[s * self.n_actions..(s + 1) * self.n_actions]
            .iter()
            .sum()
    }

    pub(crate) fn bump_visits(&mut self, s: usize, u: usize) -> u64 {
        let v = &mut self.visits[s * self.n_actions + u];
        *v += 1;
        *v
    }

    /// `(min_u Q(s,u), argmin)`, lowest index on ties.
    pub fn min(&self, s: usize) -> (f64, usize) {
        argmin(self.row(s))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Minimum and its first index.
pub fn argmin(row: &[f64]) -> (f64, usize) {
    let mut best = (row[0], 0);
    for (u, &v) in row.iter().enumerate().skip(1) {
        if v < best.0 {
            best = (v, u);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub q: QTable,
    /// `J^N_β` per window code; 0 on unreachable windows.
    pub values: Vec<f64>,
    /// Greedy `φ^N`; unreachable windows are unassigned.
    pub policy: WindowPolicy,
    pub sweeps: usize,
    /// Sup-norm change of the value vector at each sweep.
    pub increments: Vec<f64>,
}

/// Value iteration from zero until the value error is below `tol`.
///
/// Stops once the sweep increment falls under `tol (1-β) / (2β)`, which bounds
/// the distance to the fixed point by `tol / 2`.
pub fn value_iteration(mdp: &FiniteMdp, tol: f64) -> ValueIterationResult {
    assert!(tol > 0.0, "tolerance must be positive");
    let beta = mdp.discount();
    let threshold = tol * (1.0 - beta) / (2.0 * beta);
    let n = mdp.n_states();
    let nu = mdp.n_actions();
    let reachable: Vec<usize> = mdp.reachable_states().collect();

    let mut values = vec![0.0; n];
    let mut increments = Vec::new();
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        let updates: Vec<(usize, f64)> = reachable
            .par_iter()
            .map(|&s| {
                let best = (0..nu)
                    .map(|u| mdp.q_backup(s, u, &values))
                    .fold(f64::INFINITY, f64::min);
                (s, best)
            })
            .collect();
        let mut delta = 0.0_f64;
        for (s, v) in updates {
            delta = delta.max((v - values[s]).abs());
            values[s] = v;
        }
        sweeps += 1;
        increments.push(delta);
        if delta < threshold {
            break;
        }
    }

    let mut q = QTable::zeros(n, nu);
    let mut actions = vec![0; n];
    let mut assigned = vec![false; n];
    for &s in &reachable {
        for u in 0..nu {
            q.set(s, u, mdp.q_backup(s, u, &values));
        }
        let (v, u) = q.min(s);
        values[s] = v;
        actions[s] = u;
        assigned[s] = true;
    }
    ValueIterationResult {
        q,
        values,
        policy: WindowPolicy {
            window_length: mdp.window_length(),
            actions,
            assigned,
        },
        sweeps,
        increments,
    }
}

/// `max |Q(s,u) - (ĉ(s,u) + β Σ P*(s'|s,u) min_v Q(s',v))|` over reachable pairs.
pub fn fixed_point_residual(mdp: &FiniteMdp, q: &QTable) -> f64 {
    let mins: Vec<f64> = (0..mdp.n_states()).map(|s| q.min(s).0).collect();
    mdp.reachable_states()
        .flat_map(|s| (0..mdp.n_actions()).map(move |u| (s, u)))
        .map(|(s, u)| (q.get(s, u) - mdp.q_backup(s, u, &mins)).abs())
        .fold(0.0, f64::max)
}
