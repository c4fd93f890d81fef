mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use mimic::bench::{evaluate_seed, expert_demos, run_benchmark, BenchmarkConfig, DEFAULT_SEEDS};
use mimic::data::{load_trajectories, save_trajectories};
use mimic::envs::{make_model, EnvModel};
use mimic::eval::{compute_baselines, Baselines, EvalStats, BASELINE_SEED, EVAL_EPISODES};
use mimic::policy::PolicyCheckpoint;
use mimic::seeds::SeedStream;
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure while running; exit code 1.
    #[error(transparent)]
    Runtime(#[from] mimic::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "mimic", version, about = "Imitation and reward learning on small environments")]
struct Cli {
    /// Output root; defaults to $MIMIC_OUT_DIR, then ./runs.
    #[arg(long, global = true, env = "MIMIC_OUT_DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the oracle expert and save the demonstrations.
    Expert {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Train one algorithm from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's environment.
        #[arg(long)]
        env: Option<String>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Demonstration file; overrides the config's `demo_file`.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Evaluate a saved policy on the ground-truth reward.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        /// Episodes per seed.
        #[arg(long, default_value_t = EVAL_EPISODES)]
        episodes: usize,
        /// First evaluation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: usize,
    },
    /// Run a benchmark suite and write benchmark.csv and benchmark.txt.
    Benchmark {
        /// Suite config; the full default suite when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the suite's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the suite's episodes per seed.
        #[arg(long)]
        episodes: Option<usize>,
        /// Overrides the suite's environments (comma separated).
        #[arg(long, value_delimiter = ',')]
        env: Option<Vec<String>>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let result = match cli.command {
        Command::Expert { env, seed, episodes } => cmd_expert(&env, seed, episodes, &out),
        Command::Train {
            config,
            env,
            seed,
            demos,
        } => cmd_train(&config, env, seed, demos, cli.out.as_deref()),
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
            seeds,
        } => cmd_eval(&checkpoint, &env, episodes, seed, seeds, &out),
        Command::Benchmark {
            config,
            seed,
            episodes,
            env,
        } => cmd_benchmark(config.as_deref(), seed, episodes, env, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn model_for(env: &str) -> Result<Arc<EnvModel>, CliError> {
    make_model(env).map(Arc::new).map_err(|e| CliError::Usage(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(mimic::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| {
        CliError::Runtime(mimic::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn cmd_expert(env: &str, seed: u64, episodes: usize, out: &Path) -> Result<(), CliError> {
    let model = model_for(env)?;
    let demos = expert_demos(model, episodes, &SeedStream::new(seed))?;
    create_dir(out)?;
    let path = out.join(format!("expert-{env}-{seed}.jsonl"));
    save_trajectories(&demos, &path)?;
    let mean = demos.iter().filter_map(|t| t.total_reward()).sum::<f64>() / demos.len().max(1) as f64;
    println!("wrote {} trajectories to {}", demos.len(), path.display());
    println!("expert mean return: {mean}");
    Ok(())
}

fn cmd_train(
    config_path: &Path,
    env: Option<String>,
    seed: Option<u64>,
    demos: Option<PathBuf>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(env) = env {
        config.env = env;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(demos) = demos {
        config.demo_file = Some(demos);
    }
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let model = model_for(&config.env)?;
    let demos = config.demo_file.as_ref().map(load_trajectories).transpose()?;
    let resolved = config.resolved(&out, demos.as_ref().map(Vec::len))?;

    let algo = resolved.spec().train(demos)?;
    let dir = resolved.run_dir(&out);
    create_dir(&dir)?;
    let mut snapshot = serde_json::to_string_pretty(&resolved).expect("config serializes");
    snapshot.push('\n');
    write_file(&dir.join("config.resolved"), &snapshot)?;
    algo.current_policy().checkpoint().save(dir.join("policy.ckpt"))?;
    let mut log = String::new();
    for m in algo.metrics() {
        log.push_str(&m.to_string());
        log.push('\n');
    }
    write_file(&dir.join("metrics.log"), &log)?;

    let mean = evaluate_seed(algo.current_policy(), model, EVAL_EPISODES, resolved.seed)?;
    println!("trained {} on {} (seed {})", algo.name(), resolved.env, resolved.seed);
    println!("mean return over {EVAL_EPISODES} episodes: {mean}");
    println!("run directory: {}", dir.display());
    Ok(())
}

/// Random and expert means for `env`, cached under `<out>/baselines`.
fn cached_baselines(model: &Arc<EnvModel>, env: &str, episodes: usize, seeds: usize, out: &Path) -> Result<Baselines, CliError> {
    let dir = out.join("baselines");
    let path = dir.join(format!("{env}-{episodes}x{seeds}.json"));
    if let Ok(text) = std::fs::read_to_string(&path) {
        match serde_json::from_str(&text) {
            Ok(b) => return Ok(b),
            Err(e) => log::warn!("ignoring unreadable baseline cache {}: {e}", path.display()),
        }
    }
    let b = compute_baselines(Arc::clone(model), episodes, seeds, &SeedStream::new(BASELINE_SEED))?;
    create_dir(&dir)?;
    write_file(&path, &serde_json::to_string(&b).expect("baselines serialize"))?;
    Ok(b)
}

fn cmd_eval(checkpoint: &Path, env: &str, episodes: usize, seed: u64, seeds: usize, out: &Path) -> Result<(), CliError> {
    if seeds < 2 {
        return Err(CliError::Usage("--seeds must be at least 2 for a confidence interval".into()));
    }
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    let model = model_for(env)?;
    let ckpt = PolicyCheckpoint::load(checkpoint)?;
    if let Some(d) = ckpt.obs_dim() {
        if d != model.obs_dim() {
            return Err(CliError::Runtime(mimic::Error::Dimension {
                what: "checkpoint observation width",
                expected: model.obs_dim(),
                got: d,
            }));
        }
    }
    let policy = ckpt.into_policy()?;
    if policy.action_count() != model.action_count() {
        return Err(CliError::Runtime(mimic::Error::Dimension {
            what: "checkpoint action count",
            expected: model.action_count(),
            got: policy.action_count(),
        }));
    }
    let means = (0..seeds as u64)
        .map(|i| evaluate_seed(policy.as_ref(), Arc::clone(&model), episodes, seed + i))
        .collect::<mimic::Result<Vec<_>>>()?;
    let baselines = cached_baselines(&model, env, episodes, seeds, out)?;
    let stats = EvalStats::from_seed_means(&means, Some(&baselines))?;
    let normalized = stats.normalized.expect("baselines given");
    println!("{env}: {:.4} ± {:.4} (95% CI, {seeds} seeds x {episodes} episodes)", stats.mean, stats.half_width());
    println!("normalized return: {normalized:.4}");
    let per_seed: Vec<String> = means.iter().map(f64::to_string).collect();
    println!("algo,env,seed_count,mean_return,ci_half_width,normalized_mean,per_seed_means");
    println!(
        "{},{env},{seeds},{},{},{normalized},{}",
        checkpoint.display(),
        stats.mean,
        stats.half_width(),
        per_seed.join(";")
    );
    Ok(())
}

fn cmd_benchmark(
    config_path: Option<&Path>,
    seed: Option<u64>,
    episodes: Option<usize>,
    envs: Option<Vec<String>>,
    out: &Path,
) -> Result<(), CliError> {
    let mut config = match config_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read suite {}: {e}", p.display())))?;
            serde_json::from_str::<BenchmarkConfig>(&text)
                .map_err(|e| CliError::Usage(format!("invalid suite {}: {e}", p.display())))?
        }
        None => BenchmarkConfig::default(),
    };
    if let Some(s) = seed {
        config.root_seed = s;
    }
    if let Some(e) = episodes {
        config.episodes = e;
    }
    if let Some(envs) = envs {
        config.envs = envs;
    }
    for env in &config.envs {
        model_for(env)?;
    }
    if config.n_seeds < 2 || config.episodes == 0 {
        return Err(CliError::Usage("a suite needs n_seeds >= 2 and episodes >= 1".into()));
    }
    let report = run_benchmark(&config)?;
    report.write(out)?;
    print!("{}", report.to_table());
    println!("wrote {} and {}", out.join("benchmark.csv").display(), out.join("benchmark.txt").display());
    Ok(())
}
