//! Seeded train-and-evaluate runs and the benchmark table built from them.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithm::{build_algorithm, AlgoConfig, ImitationAlgorithm, ALGORITHMS};
use crate::data::Trajectory;
use crate::envs::{make_model, rollout, EnvInstance, EnvModel, ExpertPolicy, REGISTRY};
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, Baselines, EvalStats, EVAL_EPISODES};
use crate::policy::{Policy, UniformPolicy};
use crate::seeds::{names, SeedStream};

pub const DEFAULT_SEEDS: usize = 5;

/// `n` rollouts of the oracle expert, with rewards, on substreams of `seeds`.
pub fn expert_demos(model: Arc<EnvModel>, n: usize, seeds: &SeedStream) -> Result<Vec<Trajectory>> {
    let expert = ExpertPolicy::for_model(&model);
    let seeds = seeds.derive("demos");
    let mut env = EnvInstance::new(model, &seeds);
    rollout(&expert, &mut env, n, &mut seeds.derive("actions").rng())
}

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub env: String,
    pub algorithm: AlgoConfig,
    pub seed: u64,
    /// Defaults to [`AlgoConfig::default_budget`].
    #[serde(default)]
    pub budget: Option<usize>,
    /// Number of generated expert demos; defaults to [`AlgoConfig::default_demos`].
    #[serde(default)]
    pub demos: Option<usize>,
}

impl RunSpec {
    pub fn new(env: &str, algorithm: AlgoConfig, seed: u64) -> Self {
        Self {
            env: env.to_string(),
            algorithm,
            seed,
            budget: None,
            demos: None,
        }
    }

    /// Every default made explicit.
    pub fn resolved(&self) -> Result<Self> {
        let model = make_model(&self.env)?;
        Ok(Self {
            env: self.env.clone(),
            algorithm: self.algorithm.resolved(&model),
            seed: self.seed,
            budget: Some(self.budget.unwrap_or_else(|| self.algorithm.default_budget(&model))),
            demos: Some(self.demos.unwrap_or_else(|| self.algorithm.default_demos())),
        })
    }

    pub fn seeds(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }

    /// Trains the algorithm. `demos` replaces the generated demonstrations
    /// when given.
    pub fn train(&self, demos: Option<Vec<Trajectory>>) -> Result<Box<dyn ImitationAlgorithm>> {
        let spec = self.resolved()?;
        let model = Arc::new(make_model(&spec.env)?);
        let seeds = spec.seeds();
        let demos = match demos {
            Some(d) => d,
            None => expert_demos(Arc::clone(&model), spec.demos.unwrap_or(0), &seeds)?,
        };
        let env = EnvInstance::new(Arc::clone(&model), &seeds.derive(names::ENV));
        let mut algo = build_algorithm(&spec.algorithm, env, &demos, &seeds)?;
        algo.train(spec.budget.unwrap_or(0))?;
        Ok(algo)
    }
}

/// Mean ground-truth return of `policy` over `episodes` evaluation rollouts
/// for the run seeded with `seed`.
pub fn evaluate_seed(policy: &dyn Policy, model: Arc<EnvModel>, episodes: usize, seed: u64) -> Result<f64> {
    evaluate_policy(policy, model, episodes, &SeedStream::new(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    pub algorithm: AlgoConfig,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub demos: Option<usize>,
}

impl From<AlgoConfig> for SuiteEntry {
    fn from(algorithm: AlgoConfig) -> Self {
        Self {
            algorithm,
            budget: None,
            demos: None,
        }
    }
}

/// Every algorithm crossed with every environment. Seed `i` of a cell uses
/// root seed `root_seed + i`, so a cell's run can be repeated on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub envs: Vec<String>,
    pub algorithms: Vec<SuiteEntry>,
    pub n_seeds: usize,
    pub root_seed: u64,
    pub episodes: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            envs: REGISTRY.iter().map(|s| s.to_string()).collect(),
            algorithms: ALGORITHMS
                .iter()
                .map(|n| AlgoConfig::from_name(n).expect("registered").into())
                .collect(),
            n_seeds: DEFAULT_SEEDS,
            root_seed: 0,
            episodes: EVAL_EPISODES,
        }
    }
}

/// Results of one (row, environment) pair. Reference rows have the names
/// `random` and `expert`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkCell {
    pub algo: String,
    pub env: String,
    pub per_seed_means: Vec<f64>,
    pub stats: Option<EvalStats>,
    pub error: Option<String>,
    /// Wall time of each seed in seconds.
    #[serde(skip)]
    pub seconds: Vec<f64>,
}

impl BenchmarkCell {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub envs: Vec<String>,
    pub cells: Vec<BenchmarkCell>,
}

enum Job {
    Reference { env: usize, expert: bool },
    Train { entry: usize, env: usize },
}

pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if config.n_seeds < 2 {
        return Err(Error::InvalidArgument("a benchmark needs at least 2 seeds".into()));
    }
    if config.episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let models = config
        .envs
        .iter()
        .map(|e| make_model(e).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for env in 0..models.len() {
        jobs.push(Job::Reference { env, expert: false });
        jobs.push(Job::Reference { env, expert: true });
    }
    for entry in 0..config.algorithms.len() {
        for env in 0..models.len() {
            jobs.push(Job::Train { entry, env });
        }
    }
    let tasks: Vec<(usize, u64)> = (0..jobs.len())
        .flat_map(|j| (0..config.n_seeds as u64).map(move |s| (j, s)))
        .collect();
    // Collecting from an indexed parallel iterator preserves task order.
    let outcomes: Vec<(Result<f64>, f64)> = tasks
        .par_iter()
        .map(|&(j, s)| {
            let start = Instant::now();
            let seed = config.root_seed + s;
            let result = match jobs[j] {
                Job::Reference { env, expert } => {
                    let model = Arc::clone(&models[env]);
                    let policy: Box<dyn Policy> = if expert {
                        Box::new(ExpertPolicy::for_model(&model))
                    } else {
                        Box::new(UniformPolicy {
                            actions: model.action_count(),
                        })
                    };
                    evaluate_seed(policy.as_ref(), model, config.episodes, seed)
                }
                Job::Train { entry, env } => {
                    let e = &config.algorithms[entry];
                    let spec = RunSpec {
                        env: config.envs[env].clone(),
                        algorithm: e.algorithm,
                        seed,
                        budget: e.budget,
                        demos: e.demos,
                    };
                    spec.train(None).and_then(|algo| {
                        evaluate_seed(algo.current_policy(), Arc::clone(&models[env]), config.episodes, seed)
                    })
                }
            };
            (result, start.elapsed().as_secs_f64())
        })
        .collect();

    let mut cells = Vec::with_capacity(jobs.len());
    for (j, chunk) in outcomes.chunks(config.n_seeds).enumerate() {
        let (algo, env) = match jobs[j] {
            Job::Reference { env, expert } => (if expert { "expert" } else { "random" }.to_string(), env),
            Job::Train { entry, env } => (config.algorithms[entry].algorithm.name().to_string(), env),
        };
        let mut means = Vec::new();
        let mut error = None;
        for (r, _) in chunk {
            match r {
                Ok(m) => means.push(*m),
                Err(e) => {
                    log::error!("{algo} on {}: {e}", config.envs[env]);
                    error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        cells.push(BenchmarkCell {
            algo,
            env: config.envs[env].clone(),
            per_seed_means: if error.is_some() { Vec::new() } else { means },
            stats: None,
            error,
            seconds: chunk.iter().map(|(_, t)| *t).collect(),
        });
    }

    for (e, env) in config.envs.iter().enumerate() {
        let random = &cells[2 * e];
        let expert = &cells[2 * e + 1];
        let baselines = match (random.failed() || expert.failed(), random.per_seed_means.len()) {
            (false, n) if n > 0 => Some(Baselines {
                random_mean: mean(&random.per_seed_means),
                expert_mean: mean(&expert.per_seed_means),
            }),
            _ => None,
        };
        for cell in cells.iter_mut().filter(|c| &c.env == env && !c.failed()) {
            match EvalStats::from_seed_means(&cell.per_seed_means, baselines.as_ref()) {
                Ok(s) => cell.stats = Some(s),
                Err(err) => cell.error = Some(err.to_string()),
            }
        }
    }
    Ok(BenchmarkReport {
        envs: config.envs.clone(),
        cells,
    })
}

fn mean(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub const CSV_HEADER: [&str; 7] = [
    "algo",
    "env",
    "seed_count",
    "mean_return",
    "ci_half_width",
    "normalized_mean",
    "per_seed_means",
];

impl BenchmarkReport {
    pub fn cell(&self, algo: &str, env: &str) -> Option<&BenchmarkCell> {
        self.cells.iter().find(|c| c.algo == algo && c.env == env)
    }

    /// One row per cell. Failed cells leave the numeric columns empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for c in &self.cells {
            let (mean, half, norm) = match &c.stats {
                Some(s) => (
                    s.mean.to_string(),
                    s.half_width().to_string(),
                    s.normalized.map(|n| n.to_string()).unwrap_or_default(),
                ),
                None => Default::default(),
            };
            let seeds = c
                .per_seed_means
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                c.algo.as_str(),
                c.env.as_str(),
                &c.per_seed_means.len().to_string(),
                &mean,
                &half,
                &norm,
                &seeds,
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Algorithms as rows, environments as columns, `mean ± half-width`
    /// followed by the normalized mean in brackets.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !rows.contains(&c.algo.as_str()) {
                rows.push(&c.algo);
            }
        }
        let fmt = |c: Option<&BenchmarkCell>| match c {
            None => String::new(),
            Some(c) => match (&c.stats, &c.error) {
                (Some(s), _) => match s.normalized {
                    Some(n) => format!("{:.2} ± {:.2} [{:.2}]", s.mean, s.half_width(), n),
                    None => format!("{:.2} ± {:.2}", s.mean, s.half_width()),
                },
                (None, Some(_)) => "failed".to_string(),
                (None, None) => String::new(),
            },
        };
        let mut grid = vec![std::iter::once("algorithm".to_string())
            .chain(self.envs.iter().cloned())
            .collect::<Vec<_>>()];
        for r in &rows {
            grid.push(
                std::iter::once(r.to_string())
                    .chain(self.envs.iter().map(|e| fmt(self.cell(r, e))))
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|i| grid.iter().map(|row| row[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (k, row) in grid.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", line.join(" | ").trim_end());
            if k == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "{}", rule.join("-+-"));
            }
        }
        for c in self.cells.iter().filter(|c| c.failed()) {
            let _ = writeln!(out, "{} on {} failed: {}", c.algo, c.env, c.error.as_deref().unwrap_or(""));
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("benchmark.csv");
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let table_path = dir.join("benchmark.txt");
        std::fs::write(&table_path, self.to_table()).map_err(|e| Error::io(&table_path, e))
    }
}
