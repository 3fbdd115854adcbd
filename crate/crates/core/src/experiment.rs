//! Bundled machine-repair models and the end-to-end experiment driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::approx_mdp::{
    build_approx_mdp, value_iteration, FiniteMdp, QTable, ValueIterationResult,
};
use crate::ergodicity::{stability_report, StabilityReport, DEFAULT_L_RESOLUTION};
use crate::error::{Error, Result};
use crate::evaluation::{bound_report, evaluate_window_policy, BoundOptions, BoundReport};
use crate::model::{load_model, ExplorationPolicy, ModelFile, PomdpModel, WindowPolicy};
use crate::qlearning::{greedy_policy, run_q_learning, LearnConfig, LearningCurve};

pub const EXAMPLE_NAMES: [&str; 4] = ["repair1", "repair2", "repair3", "repair3-perfect"];

/// Parameters of the two-state machine-repair family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairParams {
    /// channel error probability
    pub epsilon: f64,
    /// repair success probability
    pub kappa: f64,
    /// breakdown probability
    pub theta: f64,
    /// repair cost
    pub repair_cost: f64,
    /// cost of a broken machine
    pub broken_cost: f64,
    pub discount: f64,
}

fn names(a: &str, b: &str) -> Vec<String> {
    vec![a.to_string(), b.to_string()]
}

fn repair_file(
    transition: Vec<Vec<Vec<f64>>>,
    channel: Vec<Vec<f64>>,
    repair_cost: f64,
    broken_cost: f64,
    discount: f64,
) -> ModelFile {
    ModelFile {
        states: names("broken", "working"),
        actions: names("wait", "repair"),
        observations: names("broken", "working"),
        transition,
        channel,
        cost: vec![
            vec![broken_cost, repair_cost + broken_cost],
            vec![0.0, repair_cost],
        ],
        discount,
        prior: vec![0.5, 0.5],
    }
}

/// Machine repair with states `0 = broken`, `1 = working` and actions
/// `0 = wait`, `1 = repair`. A broken machine left alone stays broken and a
/// working machine under repair stays working.
pub fn machine_repair(p: RepairParams) -> Result<PomdpModel> {
    let transition = vec![
        vec![vec![1.0, 0.0], vec![1.0 - p.kappa, p.kappa]],
        vec![vec![p.theta, 1.0 - p.theta], vec![0.0, 1.0]],
    ];
    let channel = vec![
        vec![1.0 - p.epsilon, p.epsilon],
        vec![p.epsilon, 1.0 - p.epsilon],
    ];
    PomdpModel::from_file(repair_file(
        transition,
        channel,
        p.repair_cost,
        p.broken_cost,
        p.discount,
    ))
}

fn repair3(channel: Vec<Vec<f64>>) -> Result<PomdpModel> {
    let transition = vec![
        vec![vec![0.9, 0.1], vec![0.6, 0.4]],
        vec![vec![0.4, 0.6], vec![0.1, 0.9]],
    ];
    PomdpModel::from_file(repair_file(transition, channel, 3.0, 1.0, 0.8))
}

/// One of [`EXAMPLE_NAMES`]. `repair3-perfect` is `repair3` with a noiseless
/// channel.
pub fn example_model(name: &str) -> Result<PomdpModel> {
    match name {
        "repair1" => machine_repair(RepairParams {
            epsilon: 0.3,
            kappa: 0.8,
            theta: 0.1,
            repair_cost: 5.0,
            broken_cost: 1.0,
            discount: 0.8,
        }),
        "repair2" => machine_repair(RepairParams {
            epsilon: 0.1,
            kappa: 0.9,
            theta: 0.3,
            repair_cost: 5.0,
            broken_cost: 1.0,
            discount: 0.8,
        }),
        "repair3" => repair3(vec![vec![0.7, 0.3], vec![0.3, 0.7]]),
        "repair3-perfect" => repair3(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        other => Err(Error::UnknownExample(other.to_string())),
    }
}

/// Learning parameters shared by every window length of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSettings {
    pub total_steps: u64,
    pub seed: u64,
    /// Exploration probabilities; uniform when omitted.
    #[serde(default)]
    pub exploration: Option<Vec<f64>>,
    pub snapshot_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Solve,
    Learn,
    Evaluate,
    Bounds,
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Solve, Stage::Learn, Stage::Evaluate, Stage::Bounds]
}

fn default_bins() -> usize {
    2001
}

fn default_l_resolution() -> usize {
    DEFAULT_L_RESOLUTION
}

fn default_vi_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model file, relative to the config file's directory.
    pub model: PathBuf,
    pub window_lengths: Vec<usize>,
    pub learn: LearnSettings,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_l_resolution")]
    pub l_resolution: usize,
    #[serde(default = "default_vi_tol")]
    pub vi_tol: f64,
    /// Output directory, relative to the config file's directory.
    pub output_dir: PathBuf,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
}

impl ExperimentConfig {
    /// Reads a config and resolves its relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.model = base.join(&cfg.model);
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_lengths.is_empty() {
            return Err(Error::Config("window_lengths is empty".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("bins must be at least 2".into()));
        }
        if self.l_resolution == 0 {
            return Err(Error::Config("l_resolution must be positive".into()));
        }
        if !(self.vi_tol > 0.0) {
            return Err(Error::Config("vi_tol must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("no stages selected".into()));
        }
        Ok(())
    }

    fn runs(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn exploration(&self, model: &PomdpModel) -> Result<ExplorationPolicy> {
        match &self.learn.exploration {
            Some(p) => {
                if p.len() != model.n_actions() {
                    return Err(Error::Config(format!(
                        "exploration has {} entries for {} actions",
                        p.len(),
                        model.n_actions()
                    )));
                }
                ExplorationPolicy::new(p.clone())
            }
            None => Ok(ExplorationPolicy::uniform(model.n_actions())),
        }
    }

    /// Seed of the learning run for window length `n`.
    pub fn seed_for(&self, n: usize) -> u64 {
        derive_seed(self.learn.seed, n as u64)
    }
}

/// SplitMix64 finalizer of `seed + index`, giving well-separated seeds for
/// concurrent runs.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Outcome of one window length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowRun {
    pub n: usize,
    pub n_windows: usize,
    pub reachable_windows: usize,
    pub sweeps: usize,
    pub final_sup_error: Option<f64>,
    pub policy_value: Option<f64>,
    pub learned_policy_value: Option<f64>,
    /// Why the learned policy could not be evaluated, if it could not.
    pub learned_policy_note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub stability: StabilityReport,
    pub runs: Vec<WindowRun>,
    pub bounds: Option<BoundReport>,
    pub files: Vec<PathBuf>,
}

struct PerWindow {
    mdp: FiniteMdp,
    vi: ValueIterationResult,
    learned: Option<(QTable, LearningCurve)>,
}

/// Runs the selected stages and writes the reports into `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let model = load_model(&cfg.model).map_err(|e| e.in_stage("load"))?;
    let exploration = cfg.exploration(&model)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut files = Vec::new();

    let stability = stability_report(&model, &exploration, &cfg.window_lengths, cfg.l_resolution)
        .map_err(|e| e.in_stage("stability"))?;
    let path = cfg.output_dir.join("stability.json");
    write_json(
        &path,
        &serde_json::to_value(&stability).expect("report serializes"),
    )?;
    files.push(path);
    let pi_star = stability.pi_star.clone();

    let per_window: Vec<PerWindow> = cfg
        .window_lengths
        .par_iter()
        .map(|&n| {
            let mdp = build_approx_mdp(&model, &pi_star, n).map_err(|e| e.in_stage("solve"))?;
            let vi = value_iteration(&mdp, cfg.vi_tol);
            let learned = if cfg.runs(Stage::Learn) {
                let lc = LearnConfig {
                    window_length: n,
                    total_steps: cfg.learn.total_steps,
                    seed: cfg.seed_for(n),
                    exploration: exploration.clone(),
                    snapshot_every: cfg.learn.snapshot_every,
                };
                Some(
                    run_q_learning(&model, &lc, Some((&mdp, &vi.values)))
                        .map_err(|e| e.in_stage("learn"))?,
                )
            } else {
                None
            };
            Ok(PerWindow { mdp, vi, learned })
        })
        .collect::<Result<_>>()?;

    let mut runs = Vec::new();
    for (&n, pw) in cfg.window_lengths.iter().zip(&per_window) {
        let learned_policy = pw.learned.as_ref().map(|(q, _)| greedy_policy(q, n));
        if cfg.runs(Stage::Solve) || cfg.runs(Stage::Learn) {
            let path = cfg.output_dir.join(format!("qtable_N{n}.json"));
            write_json(&path, &qtable_json(&model, pw, n))?;
            files.push(path);
            let path = cfg.output_dir.join(format!("policy_N{n}.json"));
            write_json(&path, &policy_json(&model, pw, learned_policy.as_ref(), n))?;
            files.push(path);
        }
        let mut final_sup_error = None;
        if let Some((_, curve)) = &pw.learned {
            let path = cfg.output_dir.join(format!("curve_N{n}.csv"));
            curve.save_csv(&path)?;
            files.push(path);
            final_sup_error = curve.final_error();
        }
        let (mut policy_value, mut learned_policy_value, mut learned_policy_note) =
            (None, None, None);
        if cfg.runs(Stage::Evaluate) {
            policy_value = Some(
                evaluate_window_policy(&model, &pw.vi.policy, &exploration)
                    .map_err(|e| e.in_stage("evaluate"))?,
            );
            if let Some(p) = &learned_policy {
                match evaluate_window_policy(&model, p, &exploration) {
                    Ok(v) => learned_policy_value = Some(v),
                    Err(e @ Error::PolicyGap { .. }) => learned_policy_note = Some(e.to_string()),
                    Err(e) => return Err(e.in_stage("evaluate")),
                }
            }
        }
        runs.push(WindowRun {
            n,
            n_windows: pw.mdp.n_states(),
            reachable_windows: pw.mdp.reachable_states().count(),
            sweeps: pw.vi.sweeps,
            final_sup_error,
            policy_value,
            learned_policy_value,
            learned_policy_note,
        });
    }
    if cfg.runs(Stage::Evaluate) {
        let path = cfg.output_dir.join("evaluation.json");
        write_json(&path, &serde_json::to_value(&runs).expect("runs serialize"))?;
        files.push(path);
    }

    let bounds = if cfg.runs(Stage::Bounds) {
        let opts = BoundOptions {
            warmup: exploration.clone(),
            bins: cfg.bins,
            l_resolution: cfg.l_resolution,
            vi_tol: cfg.vi_tol,
        };
        let report = bound_report(&model, &pi_star, &cfg.window_lengths, &opts)
            .map_err(|e| e.in_stage("bounds"))?;
        let path = cfg.output_dir.join("bounds.csv");
        report.save_csv(&path)?;
        files.push(path);
        let path = cfg.output_dir.join("baseline.json");
        write_json(
            &path,
            &serde_json::to_value(&report).expect("report serializes"),
        )?;
        files.push(path);
        Some(report)
    } else {
        None
    };

    Ok(ExperimentReport {
        stability,
        runs,
        bounds,
        files,
    })
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn qtable_json(model: &PomdpModel, pw: &PerWindow, n: usize) -> Value {
    let ix = pw.mdp.indexer();
    let mut windows = BTreeMap::new();
    for s in 0..ix.count() {
        let mut entry = json!({
            "reachable": pw.mdp.is_reachable(s),
            "q_star": pw.vi.q.row(s),
            "value": pw.vi.values[s],
        });
        if let Some((q, _)) = &pw.learned {
            entry["q_learned"] = json!(q.row(s));
            entry["visits"] = json!((0..q.n_actions())
                .map(|u| q.visits(s, u))
                .collect::<Vec<_>>());
        }
        windows.insert(ix.decode(s).to_string(), entry);
    }
    json!({
        "window_length": n,
        "actions": model.action_names(),
        "windows": windows,
    })
}

fn policy_json(
    model: &PomdpModel,
    pw: &PerWindow,
    learned: Option<&WindowPolicy>,
    n: usize,
) -> Value {
    let ix = pw.mdp.indexer();
    let name = |p: &WindowPolicy, s: usize| {
        if p.assigned[s] {
            Value::String(model.action_names()[p.action(s)].clone())
        } else {
            Value::Null
        }
    };
    let mut windows = BTreeMap::new();
    for s in 0..ix.count() {
        let mut entry = json!({ "optimal": name(&pw.vi.policy, s) });
        if let Some(p) = learned {
            entry["learned"] = name(p, s);
        }
        windows.insert(ix.decode(s).to_string(), entry);
    }
    json!({
        "window_length": n,
        "windows": windows,
    })
}
