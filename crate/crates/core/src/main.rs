//! Command-line interface: train, evaluate and compare scheduling policies.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
//! failure. All emitted files embed the configuration hash and seed; none
//! embed timestamps, so reruns with identical inputs produce identical
//! bytes.

use aoi_sched::config::{self, ExperimentConfig};
use aoi_sched::metrics::{self, Report};
use aoi_sched::net::NetParams;
use aoi_sched::policy::{ActionMode, Scheduler};
use aoi_sched::train::{self, EpisodeObserver, EpisodeRecord};
use aoi_sched::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

#[derive(Parser)]
#[command(name = "aoi-sched", version, about = "Age-aware sensor scheduling: simulate, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scheduling policy and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate one policy and write a report plus per-node CDF files.
    Evaluate(EvaluateArgs),
    /// Evaluate several policies on identical seeds and compare them.
    Compare(CompareArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run seed: fixes initialization, environment and action streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override train.episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override train.n_workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: output_dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Policy to evaluate: benchmark, round_robin, max_age,
    /// checkpoint:<path> (sampled) or greedy:<path> (argmax).
    #[arg(long)]
    policy: String,
    /// Override eval.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override eval.episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override eval.horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Output directory (default: output_dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Policy to include (repeat the flag; at least two).
    #[arg(long = "policy")]
    policies: Vec<String>,
    /// Override eval.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override eval.episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override eval.horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Output directory (default: output_dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 1,
        Error::Config(_) => 2,
        _ => 3,
    }
}

/// Resolves a policy specification against a configuration.
fn parse_policy(spec: &str, cfg: &ExperimentConfig) -> Result<(Scheduler, String)> {
    match spec {
        "benchmark" => Ok((Scheduler::benchmark_for(&cfg.env)?, "benchmark".into())),
        "round_robin" => Ok((Scheduler::RoundRobin, "round_robin".into())),
        "max_age" => Ok((Scheduler::MaxAge, "max_age".into())),
        "learned" => Err(Error::Usage(
            "a trained policy is loaded from a file: use checkpoint:<path>".into(),
        )),
        other => {
            let (path, mode, label) = if let Some(path) = other.strip_prefix("checkpoint:") {
                (path, ActionMode::Sample, "learned")
            } else if let Some(path) = other.strip_prefix("greedy:") {
                (path, ActionMode::Greedy, "greedy")
            } else {
                return Err(Error::Usage(format!(
                    "unknown policy '{other}'; expected benchmark, round_robin, max_age, \
                     checkpoint:<path> or greedy:<path>"
                )));
            };
            let params = NetParams::load(Path::new(path))?;
            let arch = *params.arch();
            if arch.n_sensors != cfg.env.n_sensors() || arch.history_len != cfg.env.history_len {
                return Err(Error::Config(format!(
                    "checkpoint {path} expects {} sensors / history {}, but the config has {} / {}",
                    arch.n_sensors,
                    arch.history_len,
                    cfg.env.n_sensors(),
                    cfg.env.history_len
                )));
            }
            Ok((Scheduler::Learned { params, mode }, label.into()))
        }
    }
}

/// Writes via a temporary file and rename, so readers never see a partial
/// file and reruns replace atomically.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Observer that appends one JSON line per finished episode, flushed as it
/// goes so an interrupted run keeps its progress.
struct JsonlObserver {
    file: Mutex<std::fs::File>,
    failed: AtomicBool,
}

impl JsonlObserver {
    fn create(path: &Path, header: &serde_json::Value) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{header}")?;
        Ok(JsonlObserver {
            file: Mutex::new(file),
            failed: AtomicBool::new(false),
        })
    }
}

impl EpisodeObserver for JsonlObserver {
    fn on_episode(&self, record: &EpisodeRecord) {
        let line = serde_json::to_string(record).expect("episode record serializes");
        let mut file = self.file.lock().expect("log lock poisoned");
        if writeln!(file, "{line}").is_err() {
            self.failed.store(true, Ordering::Relaxed);
        }
    }
}

/// Mean of the last `percent`% of finite entries (at least one).
fn tail_mean(xs: &[f64], percent: usize) -> f64 {
    let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        return f64::NAN;
    }
    let k = (finite.len() * percent / 100).max(1);
    let tail = &finite[finite.len() - k..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = config::parse_file(&args.config)?;
    if let Some(episodes) = args.episodes {
        cfg.train.episodes = episodes;
    }
    if let Some(workers) = args.workers {
        cfg.train.n_workers = workers;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out.display().to_string();
    }
    cfg.validate()?;
    let out_dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&out_dir)?;

    let log_path = out_dir.join("training_log.jsonl");
    let header = serde_json::json!({
        "config_hash": cfg.hash(),
        "seed": args.seed,
        "episodes": cfg.train.episodes,
        "workers": cfg.train.n_workers,
    });
    let observer = JsonlObserver::create(&log_path, &header)?;

    let started = std::time::Instant::now();
    let output = train::train(&cfg.env, &cfg.net_arch(), &cfg.train, args.seed, &observer)?;
    let elapsed = started.elapsed();

    let ckpt_path = out_dir.join("checkpoint.bin");
    output.params.save(&ckpt_path)?;
    if observer.failed.load(Ordering::Relaxed) {
        eprintln!(
            "warning: some training log writes failed; {} may be incomplete",
            log_path.display()
        );
    }

    println!(
        "trained {} episodes ({} steps, {} updates) in {:.1}s",
        output.stats.episodes,
        output.stats.total_steps,
        output.stats.updates,
        elapsed.as_secs_f64()
    );
    println!(
        "mean reward over the last 10% of episodes: {:.2}",
        tail_mean(&output.stats.episode_rewards, 10)
    );
    println!("checkpoint: {}", ckpt_path.display());
    println!("training log: {}", log_path.display());
    Ok(())
}

/// Writes `report_<policy>.toml` and one `cdf_<policy>_node<k>.csv` per
/// node. Returns the report path.
fn write_report(out_dir: &Path, cfg: &ExperimentConfig, report: &Report) -> Result<PathBuf> {
    #[derive(serde::Serialize)]
    struct ReportFile<'a> {
        config_hash: String,
        #[serde(flatten)]
        report: &'a Report,
    }
    let path = out_dir.join(format!("report_{}.toml", report.policy));
    let text = toml::to_string_pretty(&ReportFile {
        config_hash: cfg.hash(),
        report,
    })
    .expect("report serializes to TOML");
    write_atomic(&path, text.as_bytes())?;

    for (node, cdf) in report.cdf.iter().enumerate() {
        let mut csv = format!(
            "# config_hash={} seed={}\nage_ms,cdf\n",
            cfg.hash(),
            report.seed
        );
        for (age, f) in report.cdf_points.iter().zip(cdf) {
            csv.push_str(&format!("{age},{f}\n"));
        }
        let csv_path = out_dir.join(format!("cdf_{}_node{}.csv", report.policy, node));
        write_atomic(&csv_path, csv.as_bytes())?;
    }
    Ok(path)
}

fn apply_eval_overrides(
    cfg: &mut ExperimentConfig,
    seed: Option<u64>,
    episodes: Option<usize>,
    horizon: Option<usize>,
    out: Option<PathBuf>,
) {
    if let Some(seed) = seed {
        cfg.eval.seed = seed;
    }
    if let Some(episodes) = episodes {
        cfg.eval.episodes = episodes;
    }
    if let Some(horizon) = horizon {
        cfg.eval.horizon = horizon;
    }
    if let Some(out) = out {
        cfg.output_dir = out.display().to_string();
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg = config::parse_file(&args.config)?;
    apply_eval_overrides(&mut cfg, args.seed, args.episodes, args.horizon, args.out);
    cfg.validate()?;
    let (scheduler, label) = parse_policy(&args.policy, &cfg)?;
    let report = metrics::evaluate_policy(&cfg.env, &scheduler, &cfg.eval, &label)?;

    let out_dir = PathBuf::from(&cfg.output_dir);
    let path = write_report(&out_dir, &cfg, &report)?;
    println!(
        "policy {}: objective {:.4} (mean age {:.4} ms, weighted violation {:.4})",
        report.policy, report.objective, report.mean_age, report.weighted_violation
    );
    println!("report: {}", path.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    if args.policies.len() < 2 {
        return Err(Error::Usage(
            "compare needs at least two --policy arguments".into(),
        ));
    }
    let mut cfg = config::parse_file(&args.config)?;
    apply_eval_overrides(&mut cfg, args.seed, args.episodes, args.horizon, args.out);
    cfg.validate()?;
    let out_dir = PathBuf::from(&cfg.output_dir);

    let mut used = std::collections::HashSet::new();
    let mut reports = Vec::with_capacity(args.policies.len());
    for spec in &args.policies {
        let (scheduler, base) = parse_policy(spec, &cfg)?;
        let mut label = base.clone();
        let mut k = 2;
        while !used.insert(label.clone()) {
            label = format!("{base}_{k}");
            k += 1;
        }
        let report = metrics::evaluate_policy(&cfg.env, &scheduler, &cfg.eval, &label)?;
        write_report(&out_dir, &cfg, &report)?;
        reports.push(report);
    }

    let comparison = metrics::compare(&reports)?;
    let csv_path = out_dir.join("comparison.csv");
    let csv = format!(
        "# config_hash={} seed={}\n{}",
        cfg.hash(),
        cfg.eval.seed,
        comparison.to_csv()
    );
    write_atomic(&csv_path, csv.as_bytes())?;

    print!("{}", comparison.render_table());
    println!("(* lowest objective)");
    println!("comparison: {}", csv_path.display());
    Ok(())
}
