//! POMDP model, probability vectors, finite windows and policies.
//!
//! States, actions and observations are indexed `0..n`. Kernels are stored
//! dense and row-major:
//!
//! * `transition[x][u][x']`: probability of moving from `x` to `x'` under `u`
//! * `channel[x][y]`: probability of observing `y` in state `x`
//! * `cost[x][u]`: stage cost

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums when a model or belief is validated.
pub const PROB_TOL: f64 = 1e-12;

/// On-disk layout of a model file. Arrays are dense and nested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub channel: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
    pub discount: f64,
    pub prior: Vec<f64>,
}

/// A finite POMDP with discounted cost. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct PomdpModel {
    state_names: Vec<String>,
    action_names: Vec<String>,
    observation_names: Vec<String>,
    transition: Vec<f64>,
    channel: Vec<f64>,
    cost: Vec<f64>,
    discount: f64,
    prior: Belief,
    cost_sup: f64,
}

fn check_row(row: &[f64], what: impl Fn() -> String) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::Validation(format!(
            "{} has invalid entry {p}",
            what()
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::Validation(format!("{} sums to {sum}", what())));
    }
    Ok(())
}

impl TryFrom<ModelFile> for PomdpModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let nx = file.states.len();
        let nu = file.actions.len();
        let ny = file.observations.len();
        if nx == 0 || nu == 0 || ny == 0 {
            return Err(Error::Validation(
                "states, actions and observations must be nonempty".into(),
            ));
        }
        if !(file.discount > 0.0 && file.discount < 1.0) {
            return Err(Error::Validation(format!(
                "discount {} outside (0, 1)",
                file.discount
            )));
        }

        if file.transition.len() != nx {
            return Err(Error::Validation(format!(
                "transition has {} state blocks, expected {nx}",
                file.transition.len()
            )));
        }
        let mut transition = Vec::with_capacity(nx * nu * nx);
        for (x, block) in file.transition.iter().enumerate() {
            if block.len() != nu {
                return Err(Error::Validation(format!(
                    "transition[{x}] has {} action rows, expected {nu}",
                    block.len()
                )));
            }
            for (u, row) in block.iter().enumerate() {
                if row.len() != nx {
                    return Err(Error::Validation(format!(
                        "transition row (x={x}, u={u}) has length {}, expected {nx}",
                        row.len()
                    )));
                }
                check_row(row, || format!("transition row (x={x}, u={u})"))?;
                transition.extend_from_slice(row);
            }
        }

        if file.channel.len() != nx {
            return Err(Error::Validation(format!(
                "channel has {} rows, expected {nx}",
                file.channel.len()
            )));
        }
        let mut channel = Vec::with_capacity(nx * ny);
        for (x, row) in file.channel.iter().enumerate() {
            if row.len() != ny {
                return Err(Error::Validation(format!(
                    "channel row x={x} has length {}, expected {ny}",
                    row.len()
                )));
            }
            check_row(row, || format!("channel row x={x}"))?;
            channel.extend_from_slice(row);
        }

        if file.cost.len() != nx {
            return Err(Error::Validation(format!(
                "cost has {} rows, expected {nx}",
                file.cost.len()
            )));
        }
        let mut cost = Vec::with_capacity(nx * nu);
        for (x, row) in file.cost.iter().enumerate() {
            if row.len() != nu {
                return Err(Error::Validation(format!(
                    "cost row x={x} has length {}, expected {nu}",
                    row.len()
                )));
            }
            if let Some(c) = row.iter().find(|c| !c.is_finite()) {
                return Err(Error::Validation(format!("cost row x={x} has entry {c}")));
            }
            cost.extend_from_slice(row);
        }
        let cost_sup = cost.iter().fold(0.0_f64, |m, c| m.max(c.abs()));

        if file.prior.len() != nx {
            return Err(Error::Validation(format!(
                "prior has length {}, expected {nx}",
                file.prior.len()
            )));
        }
        check_row(&file.prior, || "prior".to_string())?;

        Ok(PomdpModel {
            state_names: file.states,
            action_names: file.actions,
            observation_names: file.observations,
            transition,
            channel,
            cost,
            discount: file.discount,
            prior: Belief(file.prior),
            cost_sup,
        })
    }
}

impl From<PomdpModel> for ModelFile {
    fn from(m: PomdpModel) -> Self {
        let (nx, nu) = (m.n_states(), m.n_actions());
        ModelFile {
            transition: (0..nx)
                .map(|x| (0..nu).map(|u| m.transition_row(x, u).to_vec()).collect())
                .collect(),
            channel: (0..nx).map(|x| m.channel_row(x).to_vec()).collect(),
            cost: (0..nx)
                .map(|x| m.cost[x * nu..(x + 1) * nu].to_vec())
                .collect(),
            discount: m.discount,
            prior: m.prior.0,
            states: m.state_names,
            actions: m.action_names,
            observations: m.observation_names,
        }
    }
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<PomdpModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    PomdpModel::try_from(file)
}

impl PomdpModel {
    pub fn from_file(file: ModelFile) -> Result<Self> {
        Self::try_from(file)
    }

    pub fn to_file(&self) -> ModelFile {
        self.clone().into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_file()).expect("model serializes");
        std::fs::write(path, text + "\n").map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observation_names.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn observation_names(&self) -> &[String] {
        &self.observation_names
    }

    /// `T(· | x, u)`.
    pub fn transition_row(&self, x: usize, u: usize) -> &[f64] {
        let nx = self.n_states();
        let start = (x * self.n_actions() + u) * nx;
        &self.transition[start..start + nx]
    }

    pub fn transition(&self, x: usize, u: usize, next: usize) -> f64 {
        self.transition_row(x, u)[next]
    }

    /// `O(· | x)`.
    pub fn channel_row(&self, x: usize) -> &[f64] {
        let ny = self.n_observations();
        &self.channel[x * ny..(x + 1) * ny]
    }

    pub fn channel(&self, x: usize, y: usize) -> f64 {
        self.channel[x * self.n_observations() + y]
    }

    pub fn cost(&self, x: usize, u: usize) -> f64 {
        self.cost[x * self.n_actions() + u]
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn prior(&self) -> &Belief {
        &self.prior
    }

    /// `max |c(x, u)|`.
    pub fn cost_sup(&self) -> f64 {
        self.cost_sup
    }

    /// Transition matrix `T(· | ·, u)` as rows.
    pub fn transition_matrix(&self, u: usize) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|x| self.transition_row(x, u).to_vec())
            .collect()
    }

    pub fn channel_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|x| self.channel_row(x).to_vec())
            .collect()
    }

    /// Same model with a different prior.
    pub fn with_prior(&self, prior: Belief) -> Result<Self> {
        if prior.len() != self.n_states() {
            return Err(Error::Validation(format!(
                "prior has length {}, expected {}",
                prior.len(),
                self.n_states()
            )));
        }
        Ok(PomdpModel {
            prior,
            ..self.clone()
        })
    }

    pub(crate) fn check_state(&self, x: usize) -> Result<()> {
        check_index("state", x, self.n_states())
    }

    pub(crate) fn check_action(&self, u: usize) -> Result<()> {
        check_index("action", u, self.n_actions())
    }

    pub(crate) fn check_observation(&self, y: usize) -> Result<()> {
        check_index("observation", y, self.n_observations())
    }
}

fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index < size {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, size })
    }
}

/// A probability vector over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Validates nonnegativity and unit mass (within [`PROB_TOL`]).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Validation("belief is empty".into()));
        }
        check_row(&weights, || "belief".to_string())?;
        Ok(Belief(weights))
    }

    /// Normalizes nonnegative weights; `None` when the total mass is zero.
    pub fn from_weights(mut weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        for w in &mut weights {
            *w /= total;
        }
        Some(Belief(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Belief(vec![1.0 / n as f64; n])
    }

    pub fn dirac(n: usize, at: usize) -> Self {
        let mut w = vec![0.0; n];
        w[at] = 1.0;
        Belief(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every entry strictly positive.
    pub fn has_full_support(&self) -> bool {
        self.0.iter().all(|p| *p > 0.0)
    }
}

impl std::ops::Index<usize> for Belief {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// L¹ distance. This is the total-variation norm with the factor-2
/// convention `2 sup_B |p(B) - q(B)|`, so it takes values in `[0, 2]`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// The last `N + 1` observations and `N` actions, newest first.
///
/// `obs = [y_t, y_{t-1}, ..., y_{t-N}]`, `acts = [u_{t-1}, ..., u_{t-N}]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowState {
    pub obs: Vec<usize>,
    pub acts: Vec<usize>,
}

impl WindowState {
    pub fn new(obs: Vec<usize>, acts: Vec<usize>) -> Result<Self> {
        if obs.len() != acts.len() + 1 {
            return Err(Error::Validation(format!(
                "window has {} observations and {} actions; expected N+1 and N",
                obs.len(),
                acts.len()
            )));
        }
        Ok(WindowState { obs, acts })
    }

    pub fn window_length(&self) -> usize {
        self.acts.len()
    }

    pub fn newest_obs(&self) -> usize {
        self.obs[0]
    }
}

impl fmt::Display for WindowState {
    /// `y=y_t,..,y_{t-N};u=u_{t-1},..,u_{t-N}`, used as a JSON key.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| {
            v.iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "y={};u={}", join(&self.obs), join(&self.acts))
    }
}

/// Mixed-radix codec between windows of a fixed length and `0..count`.
///
/// Digits, most significant first: `y_t, ..., y_{t-N}, u_{t-1}, ..., u_{t-N}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowIndexer {
    n_obs: usize,
    n_actions: usize,
    window_length: usize,
    /// `|Y|^N`
    obs_top: usize,
    /// `|U|^N`
    act_block: usize,
    count: usize,
}

impl WindowIndexer {
    pub fn new(n_obs: usize, n_actions: usize, window_length: usize) -> Result<Self> {
        let overflow = || {
            Error::Guard(format!(
                "window space |Y|^(N+1)|U|^N overflows for N={window_length}"
            ))
        };
        let exp = u32::try_from(window_length).map_err(|_| overflow())?;
        let obs_top = n_obs.checked_pow(exp).ok_or_else(overflow)?;
        let act_block = n_actions.checked_pow(exp).ok_or_else(overflow)?;
        let count = obs_top
            .checked_mul(n_obs)
            .and_then(|c| c.checked_mul(act_block))
            .ok_or_else(overflow)?;
        Ok(WindowIndexer {
            n_obs,
            n_actions,
            window_length,
            obs_top,
            act_block,
            count,
        })
    }

    pub fn for_model(model: &PomdpModel, window_length: usize) -> Result<Self> {
        Self::new(model.n_observations(), model.n_actions(), window_length)
    }

    /// `|Y|^{N+1} |U|^N`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn encode(&self, w: &WindowState) -> Result<usize> {
        if w.acts.len() != self.window_length || w.obs.len() != self.window_length + 1 {
            return Err(Error::Validation(format!(
                "window length mismatch: got {} obs / {} acts for N={}",
                w.obs.len(),
                w.acts.len(),
                self.window_length
            )));
        }
        let mut obs_part = 0;
        for &y in &w.obs {
            check_index("observation", y, self.n_obs)?;
            obs_part = obs_part * self.n_obs + y;
        }
        let mut act_part = 0;
        for &u in &w.acts {
            check_index("action", u, self.n_actions)?;
            act_part = act_part * self.n_actions + u;
        }
        Ok(obs_part * self.act_block + act_part)
    }

    /// Panics if `code >= count()`.
    pub fn decode(&self, code: usize) -> WindowState {
        assert!(code < self.count, "window code {code} out of range");
        let mut obs_part = code / self.act_block;
        let mut act_part = code % self.act_block;
        let mut obs = vec![0; self.window_length + 1];
        for slot in obs.iter_mut().rev() {
            *slot = obs_part % self.n_obs;
            obs_part /= self.n_obs;
        }
        let mut acts = vec![0; self.window_length];
        for slot in acts.iter_mut().rev() {
            *slot = act_part % self.n_actions;
            act_part /= self.n_actions;
        }
        WindowState { obs, acts }
    }

    /// Code of the window after observing `y_next` following action `u`:
    /// the oldest `(y, u)` pair drops out.
    pub fn shift(&self, code: usize, y_next: usize, u: usize) -> usize {
        let obs_part = code / self.act_block;
        let act_part = code % self.act_block;
        let new_obs = y_next * self.obs_top + obs_part / self.n_obs;
        let new_acts = if self.window_length == 0 {
            0
        } else {
            u * (self.act_block / self.n_actions) + act_part / self.n_actions
        };
        new_obs * self.act_block + new_acts
    }

    /// `y_t` of the window with this code.
    pub fn newest_obs(&self, code: usize) -> usize {
        code / self.act_block / self.obs_top
    }
}

/// Mixed-radix code of a window for the model's alphabets.
pub fn window_code(w: &WindowState, model: &PomdpModel) -> Result<usize> {
    WindowIndexer::for_model(model, w.window_length())?.encode(w)
}

/// Inverse of [`window_code`].
pub fn window_decode(code: usize, window_length: usize, model: &PomdpModel) -> Result<WindowState> {
    let ix = WindowIndexer::for_model(model, window_length)?;
    check_index("window code", code, ix.count())?;
    Ok(ix.decode(code))
}

/// Every window of length `N`, in code order.
pub fn all_windows(window_length: usize, model: &PomdpModel) -> Result<Vec<WindowState>> {
    let ix = WindowIndexer::for_model(model, window_length)?;
    Ok((0..ix.count()).map(|c| ix.decode(c)).collect())
}

/// Stationary randomized action rule used while exploring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExplorationPolicy(Vec<f64>);

impl ExplorationPolicy {
    /// Requires every probability strictly positive and unit total mass.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Validation("exploration policy is empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0)) {
            return Err(Error::Validation(format!(
                "exploration probability {p} is not strictly positive"
            )));
        }
        check_row(&probs, || "exploration policy".to_string())?;
        Ok(ExplorationPolicy(probs))
    }

    pub fn uniform(n_actions: usize) -> Self {
        ExplorationPolicy(vec![1.0 / n_actions as f64; n_actions])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, u: usize) -> f64 {
        self.0[u]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Deterministic action per window code.
///
/// `assigned[code]` is false when the action is a placeholder (for example
/// a window the learner never visited); evaluation refuses to use such
/// entries on reachable windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub window_length: usize,
    pub actions: Vec<usize>,
    pub assigned: Vec<bool>,
}

impl WindowPolicy {
    pub fn new(window_length: usize, actions: Vec<usize>) -> Self {
        let assigned = vec![true; actions.len()];
        WindowPolicy {
            window_length,
            actions,
            assigned,
        }
    }

    pub fn action(&self, code: usize) -> usize {
        self.actions[code]
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}
