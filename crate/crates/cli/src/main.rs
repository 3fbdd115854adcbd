use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fimeq::experiment::{
    example_model, run_experiment, ExperimentConfig, ExperimentReport, LearnSettings, Stage,
};
use fimeq::Error;

#[derive(Parser)]
#[command(
    name = "fimeq",
    version,
    about = "Finite-memory Q-learning for finite POMDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage listed in an experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write a bundled example model.
    Gen { name: String, path: PathBuf },
    /// Solve the approximate window MDP.
    Solve(Single),
    /// Learn window Q-values from a simulated trajectory.
    Learn(Single),
    /// Compute losses and bounds.
    Bounds(Single),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Single {
    model: PathBuf,
    /// Window lengths, comma separated.
    #[arg(long = "n", value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    snapshot_every: u64,
    #[command(flatten)]
    overrides: Overrides,
}

impl Overrides {
    fn apply(self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.learn.seed = s;
        }
        if let Some(s) = self.steps {
            cfg.learn.total_steps = s;
        }
        if let Some(b) = self.bins {
            cfg.bins = b;
        }
        if let Some(o) = self.out {
            cfg.output_dir = o;
        }
    }
}

fn single(args: Single, stage: Stage) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        model: args.model,
        window_lengths: args.n,
        learn: LearnSettings {
            total_steps: 2_000_000,
            seed: 0,
            exploration: None,
            snapshot_every: args.snapshot_every,
        },
        bins: 2001,
        l_resolution: fimeq::ergodicity::DEFAULT_L_RESOLUTION,
        vi_tol: 1e-9,
        output_dir: PathBuf::from("fimeq-out"),
        stages: vec![stage],
    };
    args.overrides.apply(&mut cfg);
    cfg
}

fn print_summary(report: &ExperimentReport) {
    let s = &report.stability;
    println!(
        "pi_star = {:?}  delta_T = {}  delta_O = {}  alpha = {}",
        s.pi_star.as_slice(),
        s.delta_t,
        s.delta_o,
        s.alpha
    );
    for r in &report.runs {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!(
            "N={}  windows={}  reachable={}  L={}  sup_error={}  J(policy)={}  J(learned)={}",
            r.n,
            r.n_windows,
            r.reachable_windows,
            s.l_by_n.get(&r.n).map_or("-".into(), |l| format!("{l:.6}")),
            opt(r.final_sup_error),
            opt(r.policy_value),
            opt(r.learned_policy_value),
        );
    }
    if let Some(b) = &report.bounds {
        println!(
            "J* (belief grid, {} bins) = {:.6}  refinement delta = {:.2e}  surrogate = {:.6}",
            b.grid.refined_bins,
            b.grid.refined_value,
            b.grid.refinement_delta,
            b.surrogate_baseline
        );
        for r in &b.rows {
            println!(
                "N={}  loss={:.6}  bound_robust={:.6}  bound_value={:.6}",
                r.n, r.loss, r.bound_robust, r.bound_value
            );
        }
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> fimeq::Result<()> {
    let cfg = match cli.command {
        Command::Gen { name, path } => {
            example_model(&name)?.save(&path)?;
            println!("wrote {}", path.display());
            return Ok(());
        }
        Command::Run { config, overrides } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            overrides.apply(&mut cfg);
            cfg
        }
        Command::Solve(args) => single(args, Stage::Solve),
        Command::Learn(args) => single(args, Stage::Learn),
        Command::Bounds(args) => single(args, Stage::Bounds),
    };
    let report = run_experiment(&cfg)?;
    print_summary(&report);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fimeq: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
