//! Bayesian filtering over finite windows.
//!
//! A window `I = (y_t..y_{t-N}, u_{t-1}..u_{t-N})` together with a predictor
//! for `X_{t-N}` determines the posterior of `X_t`. [`window_posterior`]
//! folds [`predictor_step`] over the `N` oldest `(y, u)` pairs, oldest first,
//! then conditions on `y_t`.

use crate::error::{Error, Result};
use crate::model::{Belief, ExplorationPolicy, PomdpModel, WindowState};

/// Conditions `belief` on observing `y`.
pub fn measurement_update(model: &PomdpModel, belief: &Belief, y: usize) -> Result<Belief> {
    model.check_observation(y)?;
    let weights = belief
        .as_slice()
        .iter()
        .enumerate()
        .map(|(x, p)| p * model.channel(x, y))
        .collect();
    Belief::from_weights(weights).ok_or(Error::ZeroProbabilityObservation { observation: y })
}

/// Pushes `belief` through `T(· | ·, u)`.
pub fn predict(model: &PomdpModel, belief: &Belief, u: usize) -> Belief {
    let nx = model.n_states();
    let mut next = vec![0.0; nx];
    for (x, p) in belief.as_slice().iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        for (n, t) in next.iter_mut().zip(model.transition_row(x, u)) {
            *n += p * t;
        }
    }
    Belief::from_weights(next).expect("stochastic kernel preserves mass")
}

/// `G(π, y, u)`: condition on `y`, then predict one step under `u`.
pub fn predictor_step(model: &PomdpModel, belief: &Belief, y: usize, u: usize) -> Result<Belief> {
    model.check_action(u)?;
    let filtered = measurement_update(model, belief, y)?;
    Ok(predict(model, &filtered, u))
}

/// Distribution of the next observation when the current state has law `belief`.
pub fn observation_distribution(model: &PomdpModel, belief: &Belief) -> Vec<f64> {
    let mut dist = vec![0.0; model.n_observations()];
    for (x, p) in belief.as_slice().iter().enumerate() {
        for (d, o) in dist.iter_mut().zip(model.channel_row(x)) {
            *d += p * o;
        }
    }
    let total: f64 = dist.iter().sum();
    dist.iter_mut().for_each(|d| *d /= total);
    dist
}

/// Posterior of `X_t` given the window, starting from `prior` on `X_{t-N}`.
pub fn window_posterior(model: &PomdpModel, prior: &Belief, w: &WindowState) -> Result<Belief> {
    let n = w.window_length();
    let mut belief = prior.clone();
    for k in (1..=n).rev() {
        belief = predictor_step(model, &belief, w.obs[k], w.acts[k - 1]).map_err(zero_to_window)?;
    }
    measurement_update(model, &belief, w.obs[0]).map_err(zero_to_window)
}

fn zero_to_window(e: Error) -> Error {
    match e {
        Error::ZeroProbabilityObservation { .. } => Error::ZeroProbabilityWindow,
        other => other,
    }
}

/// Joint weights `P(X_t = x, window)` starting from `prior` on `X_{t-N}`,
/// with the recorded actions weighted by `policy`.
///
/// All zeros for windows that cannot occur or contain out-of-range indices.
pub fn window_joint(
    model: &PomdpModel,
    prior: &Belief,
    w: &WindowState,
    policy: &ExplorationPolicy,
) -> Vec<f64> {
    let nx = model.n_states();
    let n = w.window_length();
    if w.obs.iter().any(|&y| y >= model.n_observations())
        || w.acts.iter().any(|&u| u >= model.n_actions())
    {
        return vec![0.0; nx];
    }
    // unnormalized forward recursion
    let mut alpha = prior.as_slice().to_vec();
    for k in (1..=n).rev() {
        let (y, u) = (w.obs[k], w.acts[k - 1]);
        let sigma = policy.prob(u);
        let mut next = vec![0.0; nx];
        for x in 0..nx {
            let a = alpha[x] * model.channel(x, y) * sigma;
            if a == 0.0 {
                continue;
            }
            for (nv, t) in next.iter_mut().zip(model.transition_row(x, u)) {
                *nv += a * t;
            }
        }
        alpha = next;
    }
    alpha
        .iter()
        .enumerate()
        .map(|(x, a)| a * model.channel(x, w.obs[0]))
        .collect()
}

/// Probability of the window's observations and actions starting from
/// `prior` on `X_{t-N}`, with actions drawn from `policy`.
///
/// Returns 0 for windows that cannot occur. Out-of-range indices also give 0.
pub fn window_probability(
    model: &PomdpModel,
    prior: &Belief,
    w: &WindowState,
    policy: &ExplorationPolicy,
) -> f64 {
    window_joint(model, prior, w, policy).iter().sum()
}

/// `P(Y_{t+1} = · | window, u_t = u)` starting from `prior` on `X_{t-N}`.
pub fn obs_predictive(
    model: &PomdpModel,
    prior: &Belief,
    w: &WindowState,
    u: usize,
) -> Result<Vec<f64>> {
    model.check_action(u)?;
    let posterior = window_posterior(model, prior, w)?;
    Ok(observation_distribution(
        model,
        &predict(model, &posterior, u),
    ))
}
