//! Brute-force oracles shared by the integration tests.
//!
//! Everything here works from the raw kernels by enumerating whole
//! trajectories; nothing calls into the filter or solver modules.

#![allow(dead_code)]

use std::path::PathBuf;

use fimeq::{ModelFile, PomdpModel, WindowState};
use rand::Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("core")
        .join("data")
}

pub fn bundled(file: &str) -> PomdpModel {
    fimeq::load_model(data_dir().join(file)).expect("bundled model loads")
}

pub const BUNDLED: [&str; 3] = [
    "machine_repair_1.json",
    "machine_repair_2.json",
    "machine_repair_3.json",
];

/// Every sequence of `len` digits below `radix`, first digit slowest.
pub fn sequences(radix: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..radix).map(move |d| {
                    let mut t = s.clone();
                    t.push(d);
                    t
                })
            })
            .collect();
    }
    out
}

/// Joint probability of a state path `xs[0..=n]` (oldest first) with
/// observations `ys` (oldest first) under fixed actions `us` (oldest first).
fn path_weight(m: &PomdpModel, prior: &[f64], xs: &[usize], ys: &[usize], us: &[usize]) -> f64 {
    let mut p = prior[xs[0]] * m.channel(xs[0], ys[0]);
    for k in 1..xs.len() {
        p *= m.transition(xs[k - 1], us[k - 1], xs[k]) * m.channel(xs[k], ys[k]);
    }
    p
}

fn oldest_first(w: &WindowState) -> (Vec<usize>, Vec<usize>) {
    let mut ys = w.obs.clone();
    ys.reverse();
    let mut us = w.acts.clone();
    us.reverse();
    (ys, us)
}

/// `P(X_t | window)` by summing the full joint over every state path and
/// every observation sequence, keeping the ones equal to the window.
pub fn enumerate_posterior(m: &PomdpModel, prior: &[f64], w: &WindowState) -> Option<Vec<f64>> {
    let n = w.window_length();
    let (target, us) = oldest_first(w);
    let mut post = vec![0.0; m.n_states()];
    for xs in sequences(m.n_states(), n + 1) {
        for ys in sequences(m.n_observations(), n + 1) {
            if ys != target {
                continue;
            }
            post[xs[n]] += path_weight(m, prior, &xs, &ys, &us);
        }
    }
    normalize(post)
}

/// `P(Y_{t+1} | window, u_t = u)` by enumerating paths one step longer.
pub fn enumerate_obs_predictive(
    m: &PomdpModel,
    prior: &[f64],
    w: &WindowState,
    u: usize,
) -> Option<Vec<f64>> {
    let n = w.window_length();
    let (target, mut us) = oldest_first(w);
    us.push(u);
    let mut pred = vec![0.0; m.n_observations()];
    for xs in sequences(m.n_states(), n + 2) {
        for ys in sequences(m.n_observations(), n + 2) {
            if ys[..=n] != target[..] {
                continue;
            }
            pred[ys[n + 1]] += path_weight(m, prior, &xs, &ys, &us);
        }
    }
    normalize(pred)
}

/// Probability of the window with its actions drawn from `sigma`.
pub fn enumerate_window_probability(
    m: &PomdpModel,
    prior: &[f64],
    w: &WindowState,
    sigma: &[f64],
) -> f64 {
    let n = w.window_length();
    let (target, us) = oldest_first(w);
    let action_weight: f64 = us.iter().map(|&u| sigma[u]).product();
    let mut total = 0.0;
    for xs in sequences(m.n_states(), n + 1) {
        total += path_weight(m, prior, &xs, &target, &us);
    }
    total * action_weight
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let s: f64 = v.iter().sum();
    if s <= 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= s);
    Some(v)
}

pub fn l1(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// Value iteration for the fully observed MDP on the hidden states.
pub fn mdp_values(m: &PomdpModel, tol: f64) -> Vec<f64> {
    let nx = m.n_states();
    let mut v = vec![0.0; nx];
    loop {
        let next: Vec<f64> = (0..nx)
            .map(|x| {
                (0..m.n_actions())
                    .map(|u| {
                        m.cost(x, u)
                            + m.discount()
                                * (0..nx).map(|y| m.transition(x, u, y) * v[y]).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let diff = l1(&next, &v);
        v = next;
        if diff < tol {
            return v;
        }
    }
}

pub fn random_row<R: Rng>(rng: &mut R, n: usize, sparse: bool) -> Vec<f64> {
    loop {
        let mut row: Vec<f64> = (0..n)
            .map(|_| {
                if sparse && rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
            // absorb rounding into the largest entry
            let err = 1.0 - row.iter().sum::<f64>();
            let i = (0..n).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            row[i] += err;
            return row;
        }
    }
}

/// A random model with `|X|, |Y|, |U|` in `1..=max`, possibly sparse kernels.
pub fn random_model<R: Rng>(rng: &mut R, max: usize, sparse: bool) -> PomdpModel {
    let nx = rng.random_range(1..=max);
    let ny = rng.random_range(1..=max);
    let nu = rng.random_range(1..=max);
    random_model_sized(rng, nx, ny, nu, sparse)
}

pub fn random_model_sized<R: Rng>(
    rng: &mut R,
    nx: usize,
    ny: usize,
    nu: usize,
    sparse: bool,
) -> PomdpModel {
    let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    PomdpModel::from_file(ModelFile {
        states: names("x", nx),
        actions: names("u", nu),
        observations: names("y", ny),
        transition: (0..nx)
            .map(|_| (0..nu).map(|_| random_row(rng, nx, sparse)).collect())
            .collect(),
        channel: (0..nx).map(|_| random_row(rng, ny, sparse)).collect(),
        cost: (0..nx)
            .map(|_| (0..nu).map(|_| rng.random::<f64>()).collect())
            .collect(),
        discount: rng.random_range(0.5..0.9),
        prior: random_row(rng, nx, false),
    })
    .expect("random model is valid")
}

/// Draws a window by running the hidden chain with uniform actions, so the
/// window is realizable under `prior`.
pub fn sample_window<R: Rng>(m: &PomdpModel, prior: &[f64], n: usize, rng: &mut R) -> WindowState {
    let draw = |row: &[f64], rng: &mut R| {
        let mut r = rng.random::<f64>();
        for (i, p) in row.iter().enumerate() {
            if r < *p {
                return i;
            }
            r -= p;
        }
        row.iter().rposition(|p| *p > 0.0).unwrap()
    };
    let mut x = draw(prior, rng);
    let mut obs = vec![draw(m.channel_row(x), rng)];
    let mut acts = vec![];
    for _ in 0..n {
        let u = rng.random_range(0..m.n_actions());
        x = draw(m.transition_row(x, u), rng);
        obs.insert(0, draw(m.channel_row(x), rng));
        acts.insert(0, u);
    }
    WindowState::new(obs, acts).unwrap()
}
