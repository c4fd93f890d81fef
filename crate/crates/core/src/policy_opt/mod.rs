//! Pluggable policy-optimization backends.
//!
//! Every learner that needs an RL inner loop talks to a [`PolicyOptimizer`].
//! The reward it optimizes arrives through a [`RewardChannel`]: either the
//! environment's own reward or a learned [`RewardModel`]. When a model is
//! supplied, the optimizer strips environment rewards from its batches before
//! computing anything, so the true reward cannot leak into training.

pub mod reinforce;
pub mod soft;
pub mod tabular;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::envs::{rollout, EnvInstance, EnvModel};
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyCheckpoint};
use crate::seeds::SeedStream;

pub use reinforce::{Reinforce, ReinforceConfig};
pub use soft::{
    expected_return, greedy_value_iteration, occupancy, soft_value_iteration, OccupancyMeasure,
    SoftSolution,
};
pub use tabular::{TabularOptimizer, TabularSolver};

/// Serializable choice of backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OptimizerConfig {
    Tabular {
        #[serde(default)]
        solver: TabularSolver,
    },
    Reinforce(ReinforceConfig),
}

impl OptimizerConfig {
    /// Exact greedy solves for tabular models, policy gradient otherwise.
    pub fn default_for(model: &EnvModel) -> Self {
        if model.is_tabular() {
            OptimizerConfig::Tabular {
                solver: TabularSolver::Greedy,
            }
        } else {
            OptimizerConfig::Reinforce(ReinforceConfig::default())
        }
    }

    pub fn build(&self, model: &EnvModel, seeds: &SeedStream) -> Result<Box<dyn PolicyOptimizer>> {
        Ok(match self {
            OptimizerConfig::Tabular { solver } => Box::new(TabularOptimizer::new(model, *solver, seeds)?),
            OptimizerConfig::Reinforce(config) => Box::new(Reinforce::for_model(model, *config, seeds)),
        })
    }
}

/// One transition as seen by a reward model.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub next_obs: &'a [f64],
    pub t: usize,
    /// Log-probability of `action` under the policy being optimized.
    pub log_prob: f64,
}

/// Learned reward `r(s, a, s')`.
pub trait RewardModel: Send + Sync {
    fn reward(&self, step: &StepContext<'_>) -> Result<f64>;
}

#[derive(Clone, Copy)]
pub enum RewardChannel<'a> {
    Environment,
    Model(&'a dyn RewardModel),
}

impl RewardChannel<'_> {
    /// Per-step rewards of one trajectory. `log_probs[t]` is the policy's
    /// log-probability of the action taken at step `t`.
    pub fn rewards(&self, traj: &Trajectory, log_probs: &[f64]) -> Result<Vec<f64>> {
        match self {
            RewardChannel::Environment => traj
                .rewards
                .clone()
                .ok_or(Error::InvalidArgument("trajectory carries no environment reward".into())),
            RewardChannel::Model(model) => (0..traj.len())
                .map(|t| {
                    model.reward(&StepContext {
                        obs: &traj.observations[t],
                        action: traj.actions[t],
                        next_obs: &traj.observations[t + 1],
                        t,
                        log_prob: log_probs[t],
                    })
                })
                .collect(),
        }
    }

    pub fn is_model(&self) -> bool {
        matches!(self, RewardChannel::Model(_))
    }
}

/// Summary of one `improve` call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImproveReport {
    pub updates: usize,
    /// Mean return under the optimized reward, measured before each update
    /// and averaged over updates.
    pub mean_train_return: f64,
    /// Mean environment return of the collected episodes; monitoring only.
    pub mean_env_return: f64,
}

pub trait PolicyOptimizer: Send {
    fn name(&self) -> &'static str;

    fn policy(&self) -> &dyn Policy;

    /// Episodes collected per update by `improve`.
    fn episodes_per_update(&self) -> usize;

    fn rng(&mut self) -> &mut dyn RngCore;

    /// Rolls out the current policy.
    fn collect(&mut self, env: &mut EnvInstance, n_episodes: usize) -> Result<Vec<Trajectory>>;

    /// One policy update from a batch of the current policy's episodes.
    /// Returns the batch's mean return under `reward`.
    fn update(&mut self, env: &EnvModel, batch: &[Trajectory], reward: RewardChannel<'_>) -> Result<f64>;

    /// `budget` rounds of collect-then-update.
    fn improve(
        &mut self,
        env: &mut EnvInstance,
        reward: RewardChannel<'_>,
        budget: usize,
    ) -> Result<ImproveReport> {
        let mut train = 0.0;
        let mut env_ret = 0.0;
        for _ in 0..budget {
            let n = self.episodes_per_update();
            let mut batch = self.collect(env, n)?;
            env_ret += mean_env_return(&batch);
            if reward.is_model() {
                strip_rewards(&mut batch);
            }
            train += self.update(env.model(), &batch, reward)?;
        }
        let denom = budget.max(1) as f64;
        Ok(ImproveReport {
            updates: budget,
            mean_train_return: train / denom,
            mean_env_return: env_ret / denom,
        })
    }

    fn checkpoint(&self) -> PolicyCheckpoint {
        self.policy().checkpoint()
    }
}

pub(crate) fn collect_with(
    policy: &dyn Policy,
    env: &mut EnvInstance,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Trajectory>> {
    rollout(policy, env, n, rng)
}

pub fn strip_rewards(batch: &mut [Trajectory]) {
    for t in batch {
        t.rewards = None;
    }
}

pub fn mean_env_return(batch: &[Trajectory]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().filter_map(Trajectory::total_reward).sum::<f64>() / batch.len() as f64
}
