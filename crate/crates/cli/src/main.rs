//! Command-line front end: dataset generation, training, fine-tuning,
//! sweeps, checkpoint evaluation, linear TD dynamics analysis, and reports.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 divergence halt,
//! 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use marlab::datastore::generate_dataset;
use marlab::envsim::{make_env, BehaviorKind, ENV_NAMES};
use marlab::error::{Error, Result};
use marlab::runner::{
    evaluate_checkpoint, finetune_online, report, sweep, train, RunConfig, RunStatus, SweepSpec,
};
use marlab::stability::{analyze, jacobian_from_arg, LinearTdSystem};
use marlab::Real;

#[derive(Parser)]
#[command(
    name = "marlab",
    version,
    about = "Desk-scale offline multi-agent actor-critic laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out a scripted behavior policy and write a dataset file.
    GenData(GenDataArgs),
    /// Train offline per a config file (or fine-tune from a checkpoint).
    Train(TrainArgs),
    /// Run a Cartesian grid of runs in parallel.
    Sweep(SweepArgs),
    /// Evaluate a checkpoint with deterministic policies.
    Eval(EvalArgs),
    /// Simulate and classify linearized TD error dynamics.
    Dynamics(DynamicsArgs),
    /// Render plots and a text summary for a run or sweep directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Environment name: two_step, coop_bandit, or spread_lite.
    #[arg(long)]
    env: String,
    /// Behavior policy: uniform, expert, medium, or mixture.
    #[arg(long)]
    behavior: String,
    /// Number of episodes to roll out.
    #[arg(long)]
    episodes: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path (JSON-lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to runs/<config stem>_s<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fine-tune this checkpoint online instead of training offline.
    #[arg(long)]
    finetune_from: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep grid specification (TOML: [base] config plus [axes]).
    #[arg(long)]
    grid: PathBuf,
    /// Parallel worker count.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Sweep output directory.
    #[arg(long, default_value = "sweep_out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Run configuration describing the networks and environment.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to load.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    episodes: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DynamicsArgs {
    /// Critic-to-target Jacobian: preset `scalar1` / `scalar2`, or a path to
    /// a JSON file holding a square matrix as an array of rows.
    #[arg(long)]
    j_matrix: String,
    #[arg(long, default_value_t = 0.9)]
    gamma: Real,
    #[arg(long, default_value_t = 0.1)]
    alpha_q: Real,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Initial critic values, comma-separated; default: all ones.
    #[arg(long)]
    q0: Option<String>,
    /// Fixed-point values, comma-separated; default: all zeros.
    #[arg(long)]
    q_bar: Option<String>,
    /// Actor sensitivity multiplier in the loop-gain diagnostic.
    #[arg(long, default_value_t = 1.0)]
    actor_sensitivity: Real,
    /// Normalization scale dividing the loop gain; 1 leaves it raw.
    #[arg(long, default_value_t = 1.0)]
    sigma_q: Real,
    /// Where to write the JSON report.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A run directory (metrics.csv) or sweep directory (summary.csv).
    dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Eval(args) => run_checkpoint_eval(args),
        Command::Dynamics(args) => run_dynamics(args),
        Command::Report(args) => run_report(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<ExitCode> {
    if !ENV_NAMES.contains(&args.env.as_str()) {
        return Err(Error::config(format!(
            "unknown environment '{}' (known: {})",
            args.env,
            ENV_NAMES.join(", ")
        )));
    }
    let kind = BehaviorKind::from_str(&args.behavior)?;
    let mut env = make_env(&args.env)?;
    let header = generate_dataset(env.as_mut(), kind, args.episodes, args.seed, &args.out)?;
    println!(
        "wrote {} ({} episodes, {} transitions, returns {:.3}..{:.3}, mean {:.3})",
        args.out.display(),
        header.num_episodes,
        header.num_records,
        header.return_min,
        header.return_max,
        header.return_mean
    );
    Ok(ExitCode::SUCCESS)
}

fn run_train(args: TrainArgs) -> Result<ExitCode> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out_dir = args.out.unwrap_or_else(|| {
        let stem = args.config.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        PathBuf::from("runs").join(format!("{stem}_s{}", config.seed))
    });

    let summary = match &args.finetune_from {
        Some(checkpoint) => finetune_online(&config, checkpoint, &out_dir)?,
        None => train(&config, &out_dir)?,
    };

    print_summary_lines(&out_dir, &summary);
    match summary.status {
        RunStatus::Completed => Ok(ExitCode::SUCCESS),
        RunStatus::Halted => Ok(ExitCode::from(3)),
    }
}

fn print_summary_lines(out_dir: &std::path::Path, summary: &marlab::runner::RunSummary) {
    match summary.status {
        RunStatus::Completed => println!("run completed: {}", out_dir.display()),
        RunStatus::Halted => println!(
            "run halted at step {}: {}",
            summary.halt_step.unwrap_or_default(),
            summary.halt_reason.as_deref().unwrap_or("unknown")
        ),
    }
    for (tag, eval) in [("final", &summary.final_eval), ("best", &summary.best_eval)] {
        if let Some(e) = eval {
            let score = e
                .normalized_score
                .map(|v| format!(", normalized {v:.4}"))
                .unwrap_or_default();
            println!(
                "{tag} eval (step {}): return {:.4} +- {:.4}{score}",
                e.step, e.return_mean, e.return_std
            );
        }
    }
}

fn run_sweep(args: SweepArgs) -> Result<ExitCode> {
    let spec = SweepSpec::load(&args.grid)?;
    let rows = sweep(&spec, args.workers, &args.out)?;
    let completed = rows.iter().filter(|r| r.status == "completed").count();
    println!(
        "sweep finished: {}/{} runs completed, table at {}",
        completed,
        rows.len(),
        args.out.join(marlab::runner::SWEEP_SUMMARY_FILE).display()
    );
    if completed < rows.len() {
        for row in rows.iter().filter(|r| r.status != "completed") {
            println!("  {} [{}] {}", row.run, row.status, row.note);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_checkpoint_eval(args: EvalArgs) -> Result<ExitCode> {
    let config = RunConfig::load(&args.config)?;
    let eval = evaluate_checkpoint(&config, &args.checkpoint, args.episodes, args.seed)?;
    let score = eval
        .normalized_score
        .map(|v| format!(", normalized {v:.4}"))
        .unwrap_or_default();
    println!(
        "eval over {} episodes: return {:.4} +- {:.4}{score}",
        args.episodes, eval.return_mean, eval.return_std
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_vector(arg: &str, n: usize, name: &str) -> Result<Vec<Real>> {
    let vals: Vec<Real> = arg
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<Real>()
                .map_err(|_| Error::config(format!("{name}: '{s}' is not a number")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != n {
        return Err(Error::config(format!(
            "{name} has {} entries, the Jacobian is {n}x{n}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn run_dynamics(args: DynamicsArgs) -> Result<ExitCode> {
    let j = jacobian_from_arg(&args.j_matrix)?;
    let n = j.shape()[0];
    let q0 = match &args.q0 {
        Some(s) => parse_vector(s, n, "--q0")?,
        None => vec![1.0; n],
    };
    let q_bar = match &args.q_bar {
        Some(s) => parse_vector(s, n, "--q-bar")?,
        None => vec![0.0; n],
    };
    let system = LinearTdSystem::new(j, args.gamma, args.alpha_q, q0, q_bar)?;
    let report = analyze(&system, args.steps, args.actor_sensitivity, args.sigma_q)?;

    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&args.out, json + "\n")
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    println!(
        "regime: {:?} (spectral radius {:.6}, operator norm {:.6}, empirical rate {:.6})",
        report.regime, report.spectral_radius, report.op_norm, report.empirical_rate
    );
    println!("loop gain: raw {:.6}, scaled {:.6}", report.loop_gain_raw, report.loop_gain_svn);
    println!("report written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_report(args: ReportArgs) -> Result<ExitCode> {
    let files = report(&args.dir)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}
