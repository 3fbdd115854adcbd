//! Simulation of the hidden process and finite-window Q-learning.
//!
//! Randomness comes from two ChaCha8 streams keyed by the same seed: stream
//! 0 drives the hidden trajectory (initial state, transitions, observations)
//! and stream 1 drives the exploration actions. Changing the exploration
//! policy therefore leaves the trajectory noise untouched, and a run is a
//! pure function of `(model, config)`.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx_mdp::{argmin, FiniteMdp, QTable};
use crate::error::{Error, Result};
use crate::model::{ExplorationPolicy, PomdpModel, WindowIndexer, WindowPolicy};

pub const TRAJECTORY_STREAM: u64 = 0;
pub const ACTION_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub window_length: usize,
    /// Simulated time steps, counting the warm-up.
    pub total_steps: u64,
    pub seed: u64,
    pub exploration: ExplorationPolicy,
    pub snapshot_every: u64,
}

impl LearnConfig {
    pub fn validate(&self, model: &PomdpModel) -> Result<()> {
        if self.total_steps <= self.window_length as u64 {
            return Err(Error::Config(format!(
                "total_steps {} must exceed the window length {}",
                self.total_steps, self.window_length
            )));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be positive".into()));
        }
        if self.exploration.len() != model.n_actions() {
            return Err(Error::Config(format!(
                "exploration policy has {} entries for {} actions",
                self.exploration.len(),
                model.n_actions()
            )));
        }
        ExplorationPolicy::new(self.exploration.probs().to_vec())?;
        Ok(())
    }
}

/// `(step, sup_error)` pairs with strictly increasing steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<(u64, f64)>,
}

impl LearningCurve {
    pub fn final_error(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "sup_error"])?;
        for (step, err) in &self.points {
            w.write_record([step.to_string(), format!("{err:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| Error::io(path, source);
        let mut file = std::fs::File::create(path).map_err(io)?;
        self.write_csv(&mut file)
            .map_err(|e| io(std::io::Error::other(e)))?;
        file.flush().map_err(io)
    }
}

/// Pre-built samplers for every kernel row of a model.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    model: &'a PomdpModel,
    transitions: Vec<WeightedIndex<f64>>,
    channel: Vec<WeightedIndex<f64>>,
    initial: WeightedIndex<f64>,
}

fn sampler(row: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(row).expect("validated stochastic row")
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a PomdpModel) -> Self {
        let nx = model.n_states();
        let nu = model.n_actions();
        Simulator {
            model,
            transitions: (0..nx * nu)
                .map(|i| sampler(model.transition_row(i / nu, i % nu)))
                .collect(),
            channel: (0..nx).map(|x| sampler(model.channel_row(x))).collect(),
            initial: sampler(model.prior().as_slice()),
        }
    }

    pub fn model(&self) -> &PomdpModel {
        self.model
    }

    /// Draws `(x_0, y_0)` from the prior and channel.
    pub fn initial<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let x = self.initial.sample(rng);
        (x, self.observe(x, rng))
    }

    pub fn observe<R: Rng>(&self, x: usize, rng: &mut R) -> usize {
        self.channel[x].sample(rng)
    }

    /// `(x', y', c(x, u))` with `x' ~ T(·|x,u)` and `y' ~ O(·|x')`.
    pub fn step<R: Rng>(&self, x: usize, u: usize, rng: &mut R) -> (usize, usize, f64) {
        let next = self.transitions[x * self.model.n_actions() + u].sample(rng);
        let y = self.observe(next, rng);
        (next, y, self.model.cost(x, u))
    }
}

/// One transition of the hidden process; see [`Simulator::step`].
pub fn simulate_step<R: Rng>(
    model: &PomdpModel,
    x: usize,
    u: usize,
    rng: &mut R,
) -> Result<(usize, usize, f64)> {
    model.check_state(x)?;
    model.check_action(u)?;
    Ok(Simulator::new(model).step(x, u, rng))
}

/// The two RNG streams for `seed`.
pub fn rng_streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut trajectory = ChaCha8Rng::seed_from_u64(seed);
    trajectory.set_stream(TRAJECTORY_STREAM);
    let mut actions = ChaCha8Rng::seed_from_u64(seed);
    actions.set_stream(ACTION_STREAM);
    (trajectory, actions)
}

/// Runs the window Q-learning iteration along one simulated trajectory.
///
/// The first `N` steps fill the window under exploration without updates.
/// With `reference = (mdp, J)`, `max_I |min_u Q(I,u) - J(I)|` over the
/// reachable windows of `mdp` is recorded every `snapshot_every` steps and
/// at the last step.
pub fn run_q_learning(
    model: &PomdpModel,
    cfg: &LearnConfig,
    reference: Option<(&FiniteMdp, &[f64])>,
) -> Result<(QTable, LearningCurve)> {
    cfg.validate(model)?;
    let n = cfg.window_length;
    let ix = WindowIndexer::for_model(model, n)?;
    if let Some((mdp, values)) = reference {
        if mdp.n_states() != ix.count() || values.len() != ix.count() {
            return Err(Error::Config(
                "reference solution has a different window length".into(),
            ));
        }
    }
    let sim = Simulator::new(model);
    let actions = sampler(cfg.exploration.probs());
    let (mut traj_rng, mut act_rng) = rng_streams(cfg.seed);
    let beta = model.discount();

    let mut q = QTable::zeros(ix.count(), model.n_actions());
    let mut curve = LearningCurve::default();

    let (mut x, y0) = sim.initial(&mut traj_rng);
    let mut obs = vec![y0];
    let mut acts = Vec::with_capacity(n);
    for _ in 0..n {
        let u = actions.sample(&mut act_rng);
        let (next, y, _) = sim.step(x, u, &mut traj_rng);
        x = next;
        obs.insert(0, y);
        acts.insert(0, u);
    }
    let mut code = ix.encode(&crate::model::WindowState { obs, acts })?;

    for t in n as u64..cfg.total_steps {
        let u = actions.sample(&mut act_rng);
        let (next, y, cost) = sim.step(x, u, &mut traj_rng);
        let successor = ix.shift(code, y, u);
        let target = cost + beta * q.min(successor).0;
        let k = q.visits(code, u) as f64;
        let alpha = 1.0 / (1.0 + k);
        q.set(code, u, (1.0 - alpha) * q.get(code, u) + alpha * target);
        q.bump_visits(code, u);
        x = next;
        code = successor;

        let step = t + 1;
        if let Some((mdp, values)) = reference {
            if step % cfg.snapshot_every == 0 || step == cfg.total_steps {
                curve.points.push((step, sup_error(&q, mdp, values)));
            }
        }
    }
    Ok((q, curve))
}

/// `max |min_u Q(I,u) - J(I)|` over reachable windows.
pub fn sup_error(q: &QTable, mdp: &FiniteMdp, values: &[f64]) -> f64 {
    mdp.reachable_states()
        .map(|s| (q.min(s).0 - values[s]).abs())
        .fold(0.0, f64::max)
}

/// Greedy window policy, lowest action on ties. Windows never visited get
/// action 0 and are marked unassigned.
pub fn greedy_policy(q: &QTable, window_length: usize) -> WindowPolicy {
    let n = q.n_states();
    let mut actions = Vec::with_capacity(n);
    let mut assigned = Vec::with_capacity(n);
    for s in 0..n {
        if q.state_visits(s) == 0 {
            actions.push(0);
            assigned.push(false);
        } else {
            actions.push(argmin(q.row(s)).1);
            assigned.push(true);
        }
    }
    WindowPolicy {
        window_length,
        actions,
        assigned,
    }
}
