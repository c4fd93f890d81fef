use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adversarial::{AdversarialConfig, AdversarialTrainer, DiscriminatorKind};
use crate::bc::{BcConfig, BcTrainer};
use crate::dagger::{DaggerConfig, DaggerTrainer, ExpertHandle};
use crate::data::Trajectory;
use crate::density::{DensityConfig, DensityIrl};
use crate::envs::{EnvInstance, EnvModel, ExpertPolicy};
use crate::error::{Error, Result};
use crate::mce_irl::{ExpertStatistics, MceIrl, MceIrlConfig};
use crate::policy::Policy;
use crate::policy_opt::occupancy;
use crate::preference::{PreferenceConfig, PreferenceTrainer};
use crate::seeds::SeedStream;

/// The surface every learner exposes.
///
/// Inputs specific to an algorithm (demonstrations, an expert to query, a
/// preference labeler) are given at construction. `train` is resumable:
/// `train(a)` followed by `train(b)` ends in the same state as `train(a + b)`.
/// What one unit of budget means is algorithm specific (epochs, rounds,
/// gradient iterations or generator updates) and documented on each type.
pub trait ImitationAlgorithm: Send {
    fn name(&self) -> &'static str;

    fn train(&mut self, budget: usize) -> Result<()>;

    fn current_policy(&self) -> &dyn Policy;

    /// Metric records accumulated so far, one JSON object per entry.
    fn metrics(&self) -> &[serde_json::Value];
}

/// Where MCE IRL takes the expert feature expectations from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertSource {
    #[default]
    Demos,
    /// Exact occupancy of the oracle expert.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MceIrlParams {
    pub expert: ExpertSource,
    pub fit: MceIrlConfig,
}

/// Algorithm choice with its hyperparameters, e.g.
/// `{"algo": "bc", "params": {"lr": 0.001}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgoConfig {
    Bc(BcConfig),
    Dagger(DaggerConfig),
    MceIrl(MceIrlParams),
    Density(DensityConfig),
    Gail(AdversarialConfig),
    Airl(AdversarialConfig),
    Drlhp(PreferenceConfig),
}

pub const ALGORITHMS: [&str; 7] = ["bc", "dagger", "mce_irl", "density", "gail", "airl", "drlhp"];

impl AlgoConfig {
    /// Default hyperparameters for an algorithm name.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "bc" => AlgoConfig::Bc(Default::default()),
            "dagger" => AlgoConfig::Dagger(Default::default()),
            "mce_irl" => AlgoConfig::MceIrl(Default::default()),
            "density" => AlgoConfig::Density(Default::default()),
            "gail" => AlgoConfig::Gail(Default::default()),
            "airl" => AlgoConfig::Airl(Default::default()),
            "drlhp" => AlgoConfig::Drlhp(Default::default()),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown algorithm `{other}`; expected one of {}",
                    ALGORITHMS.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlgoConfig::Bc(_) => "bc",
            AlgoConfig::Dagger(_) => "dagger",
            AlgoConfig::MceIrl(_) => "mce_irl",
            AlgoConfig::Density(_) => "density",
            AlgoConfig::Gail(_) => "gail",
            AlgoConfig::Airl(_) => "airl",
            AlgoConfig::Drlhp(_) => "drlhp",
        }
    }

    /// Fills every environment-dependent default so the result reproduces
    /// the run on its own.
    pub fn resolved(&self, model: &EnvModel) -> Self {
        match *self {
            AlgoConfig::Density(c) => AlgoConfig::Density(c.resolved(model)),
            AlgoConfig::Drlhp(c) => AlgoConfig::Drlhp(PreferenceConfig {
                optimizer: Some(c.optimizer_for(model)),
                ..c
            }),
            other => other,
        }
    }

    /// Expert demonstrations consumed at construction; 0 for algorithms that
    /// take none.
    pub fn default_demos(&self) -> usize {
        match self {
            AlgoConfig::Bc(_) | AlgoConfig::MceIrl(_) | AlgoConfig::Gail(_) | AlgoConfig::Airl(_) => 50,
            AlgoConfig::Density(_) => 100,
            AlgoConfig::Dagger(_) | AlgoConfig::Drlhp(_) => 0,
        }
    }

    /// `train` budget used when a run does not set one.
    pub fn default_budget(&self, model: &EnvModel) -> usize {
        match self {
            AlgoConfig::Bc(_) => 200,
            AlgoConfig::Dagger(_) => 5,
            AlgoConfig::MceIrl(p) => p.fit.max_iters,
            AlgoConfig::Density(_) if model.is_tabular() => 1,
            AlgoConfig::Density(_) => 2000,
            AlgoConfig::Gail(_) | AlgoConfig::Airl(_) => 2000,
            AlgoConfig::Drlhp(_) => 10,
        }
    }
}

/// Builds a ready-to-train algorithm. `demos` must be non-empty for
/// algorithms with a positive [`AlgoConfig::default_demos`]; DAgger queries
/// the oracle expert of the environment.
pub fn build_algorithm(
    config: &AlgoConfig,
    env: EnvInstance,
    demos: &[Trajectory],
    seeds: &SeedStream,
) -> Result<Box<dyn ImitationAlgorithm>> {
    let model = env.shared_model();
    Ok(match *config {
        AlgoConfig::Bc(c) => Box::new(BcTrainer::from_demos(
            model.obs_dim(),
            model.action_count(),
            demos,
            c,
            seeds,
        )?),
        AlgoConfig::Dagger(c) => {
            let expert: Arc<dyn ExpertHandle> = Arc::new(ExpertPolicy::for_model(&model));
            Box::new(DaggerTrainer::new(env, expert, c, seeds)?)
        }
        AlgoConfig::MceIrl(p) => {
            let mdp = model.as_tabular().ok_or(Error::NeedsTabular { algorithm: "mce_irl" })?;
            let stats = match p.expert {
                ExpertSource::Demos => ExpertStatistics::Demos(demos.to_vec()),
                ExpertSource::Exact => {
                    let expert = ExpertPolicy::for_model(&model);
                    let policy = expert.as_tabular().expect("tabular expert");
                    ExpertStatistics::Exact(occupancy(mdp, policy)?.feature_expectations(mdp))
                }
            };
            Box::new(MceIrl::new(mdp, stats, p.fit)?)
        }
        AlgoConfig::Density(c) => Box::new(DensityIrl::new(env, demos, c, seeds)?),
        AlgoConfig::Gail(c) => Box::new(AdversarialTrainer::new(DiscriminatorKind::Gail, env, demos, c, seeds)?),
        AlgoConfig::Airl(c) => Box::new(AdversarialTrainer::new(DiscriminatorKind::Airl, env, demos, c, seeds)?),
        AlgoConfig::Drlhp(c) => Box::new(PreferenceTrainer::new(env, c, seeds)?),
    })
}
