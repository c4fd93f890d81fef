//! Exact dynamic-programming backend for tabular environments.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    collect_with, greedy_value_iteration, mean_env_return, soft_value_iteration, strip_rewards,
    ImproveReport, PolicyOptimizer, RewardChannel, StepContext,
};
use crate::data::Trajectory;
use crate::envs::{EnvInstance, EnvModel, TabularMdp};
use crate::error::{Error, Result};
use crate::policy::{Policy, TabularPolicy};
use crate::seeds::{names, SeedStream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TabularSolver {
    /// Hard value iteration: deterministic optimal policy.
    #[default]
    Greedy,
    /// Soft value iteration on `reward / temperature`.
    Soft { temperature: f64 },
}

/// Solves the model exactly against whatever reward it is handed. A single
/// update reaches the optimum, so `improve` performs at most one solve.
#[derive(Debug, Clone)]
pub struct TabularOptimizer {
    mdp: TabularMdp,
    solver: TabularSolver,
    policy: TabularPolicy,
    rng: ChaCha8Rng,
    episodes: usize,
}

impl TabularOptimizer {
    pub fn new(model: &EnvModel, solver: TabularSolver, seeds: &SeedStream) -> Result<Self> {
        let mdp = model
            .as_tabular()
            .ok_or(Error::NeedsTabular {
                algorithm: "tabular optimizer",
            })?
            .clone();
        if let TabularSolver::Soft { temperature } = solver {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "temperature must be positive, got {temperature}"
                )));
            }
        }
        let policy = TabularPolicy::uniform(mdp.horizon(), mdp.state_count(), mdp.action_count());
        Ok(Self {
            mdp,
            solver,
            policy,
            rng: seeds.derive(names::POLICY_INIT).rng(),
            episodes: 16,
        })
    }

    pub fn tabular_policy(&self) -> &TabularPolicy {
        &self.policy
    }

    /// Expected reward table `r(s, a) = E_{s'}[model(s, a, s')]`.
    pub fn reward_table(&self, reward: RewardChannel<'_>) -> Result<Vec<Vec<f64>>> {
        let model = match reward {
            RewardChannel::Environment => return Ok(self.mdp.reward_table()),
            RewardChannel::Model(m) => m,
        };
        let (s_n, a_n) = (self.mdp.state_count(), self.mdp.action_count());
        let mut table = vec![vec![0.0; a_n]; s_n];
        for (s, row) in table.iter_mut().enumerate() {
            let obs = self.mdp.observation(s);
            for (a, cell) in row.iter_mut().enumerate() {
                let log_prob = self.policy.prob(0, s, a).ln();
                for (next, p) in self.mdp.next_state_dist(s, a).iter().enumerate() {
                    if *p == 0.0 {
                        continue;
                    }
                    let next_obs = self.mdp.observation(next);
                    *cell += p * model.reward(&StepContext {
                        obs: &obs,
                        action: a,
                        next_obs: &next_obs,
                        t: 0,
                        log_prob,
                    })?;
                }
            }
        }
        Ok(table)
    }

    fn solve(&mut self, reward: RewardChannel<'_>) -> Result<()> {
        let table = self.reward_table(reward)?;
        self.policy = match self.solver {
            TabularSolver::Greedy => greedy_value_iteration(&self.mdp, &table)?.1,
            TabularSolver::Soft { temperature } => {
                let scaled: Vec<Vec<f64>> = table
                    .iter()
                    .map(|r| r.iter().map(|x| x / temperature).collect())
                    .collect();
                soft_value_iteration(&self.mdp, &scaled)?.policy
            }
        };
        Ok(())
    }

    fn batch_return(&self, batch: &[Trajectory], reward: RewardChannel<'_>) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for traj in batch {
            let log_probs = traj
                .observations
                .iter()
                .zip(&traj.actions)
                .enumerate()
                .map(|(t, (o, a))| Ok(self.policy.log_probs(o, t)?[*a]))
                .collect::<Result<Vec<f64>>>()?;
            total += reward.rewards(traj, &log_probs)?.iter().sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }
}

impl PolicyOptimizer for TabularOptimizer {
    fn name(&self) -> &'static str {
        "tabular"
    }

    fn policy(&self) -> &dyn Policy {
        &self.policy
    }

    fn episodes_per_update(&self) -> usize {
        self.episodes
    }

    fn rng(&mut self) -> &mut dyn RngCore {
        &mut self.rng
    }

    fn collect(&mut self, env: &mut EnvInstance, n_episodes: usize) -> Result<Vec<Trajectory>> {
        collect_with(&self.policy, env, n_episodes, &mut self.rng)
    }

    fn update(&mut self, env: &EnvModel, batch: &[Trajectory], reward: RewardChannel<'_>) -> Result<f64> {
        if env.as_tabular() != Some(&self.mdp) {
            return Err(Error::InvalidArgument(
                "tabular optimizer used with a different environment".into(),
            ));
        }
        let ret = self.batch_return(batch, reward)?;
        self.solve(reward)?;
        Ok(ret)
    }

    fn improve(
        &mut self,
        env: &mut EnvInstance,
        reward: RewardChannel<'_>,
        budget: usize,
    ) -> Result<ImproveReport> {
        if budget == 0 {
            return Ok(ImproveReport {
                updates: 0,
                mean_train_return: 0.0,
                mean_env_return: 0.0,
            });
        }
        let mut batch = self.collect(env, self.episodes)?;
        let env_ret = mean_env_return(&batch);
        if reward.is_model() {
            strip_rewards(&mut batch);
        }
        let train = self.update(env.model(), &batch, reward)?;
        Ok(ImproveReport {
            updates: 1,
            mean_train_return: train,
            mean_env_return: env_ret,
        })
    }
}
