//! Monte-Carlo policy gradient on an MLP policy.
//!
//! Each update minimizes
//! `-(1/N) sum_i sum_t log pi(a_t|s_t) (G_i - b) - c (1/N) sum_i sum_t H(pi(.|s_t))`
//! where `G_i` is the episode return, `b` the batch-mean return and `c` the
//! entropy coefficient.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{collect_with, PolicyOptimizer, RewardChannel};
use crate::adam::{AdamConfig, AdamState};
use crate::data::Trajectory;
use crate::envs::{EnvInstance, EnvModel};
use crate::error::{Error, Result};
use crate::nn::GradBuffer;
use crate::policy::{MlpPolicy, Policy};
use crate::seeds::{names, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReinforceConfig {
    pub episodes_per_update: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub clip_norm: Option<f64>,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self {
            episodes_per_update: 16,
            lr: 1e-3,
            entropy_coef: 0.01,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reinforce {
    pub config: ReinforceConfig,
    policy: MlpPolicy,
    adam: AdamState,
    rng: ChaCha8Rng,
    grads: GradBuffer,
}

impl Reinforce {
    /// Fresh Glorot-initialized policy from the `policy-init` substream.
    pub fn new(obs_dim: usize, action_count: usize, config: ReinforceConfig, seeds: &SeedStream) -> Self {
        let mut init = seeds.derive(names::POLICY_INIT).rng();
        let policy = MlpPolicy::random(obs_dim, action_count, &mut init);
        Self::with_policy(policy, config, seeds)
    }

    pub fn for_model(model: &EnvModel, config: ReinforceConfig, seeds: &SeedStream) -> Self {
        Self::new(model.obs_dim(), model.action_count(), config, seeds)
    }

    pub fn with_policy(policy: MlpPolicy, config: ReinforceConfig, seeds: &SeedStream) -> Self {
        let adam = AdamState::for_net(
            AdamConfig {
                lr: config.lr,
                clip_norm: config.clip_norm,
                ..AdamConfig::default()
            },
            &policy.net,
        );
        let grads = GradBuffer::zeros_like(&policy.net);
        Self {
            config,
            policy,
            adam,
            rng: seeds.derive("rollout-actions").rng(),
            grads,
        }
    }

    pub fn mlp_policy(&self) -> &MlpPolicy {
        &self.policy
    }

    /// Collect one batch and apply one update; returns the pre-update mean
    /// return under `reward`.
    pub fn step(&mut self, env: &mut EnvInstance, reward: RewardChannel<'_>) -> Result<f64> {
        Ok(self.improve(env, reward, 1)?.mean_train_return)
    }
}

impl PolicyOptimizer for Reinforce {
    fn name(&self) -> &'static str {
        "reinforce"
    }

    fn policy(&self) -> &dyn Policy {
        &self.policy
    }

    fn episodes_per_update(&self) -> usize {
        self.config.episodes_per_update
    }

    fn rng(&mut self) -> &mut dyn RngCore {
        &mut self.rng
    }

    fn collect(&mut self, env: &mut EnvInstance, n_episodes: usize) -> Result<Vec<Trajectory>> {
        collect_with(&self.policy, env, n_episodes, &mut self.rng)
    }

    fn update(&mut self, env: &EnvModel, batch: &[Trajectory], reward: RewardChannel<'_>) -> Result<f64> {
        if self.policy.net.output_dim() != env.action_count() {
            return Err(Error::Dimension {
                what: "policy output width",
                expected: env.action_count(),
                got: self.policy.net.output_dim(),
            });
        }
        if batch.is_empty() {
            return Err(Error::Empty("policy-gradient batch"));
        }
        let net = &self.policy.net;
        // Pass 1: per-step log-probabilities and episode returns.
        let mut all_log_probs = Vec::with_capacity(batch.len());
        let mut returns = Vec::with_capacity(batch.len());
        for traj in batch {
            let lps = traj
                .observations
                .iter()
                .take(traj.len())
                .map(|o| net.forward(o))
                .collect::<Result<Vec<_>>>()?;
            let taken: Vec<f64> = lps.iter().zip(&traj.actions).map(|(lp, a)| lp[*a]).collect();
            let g: f64 = reward.rewards(traj, &taken)?.iter().sum();
            if !g.is_finite() {
                return Err(Error::NonFinite("episode return"));
            }
            returns.push(g);
            all_log_probs.push(lps);
        }
        let n = batch.len() as f64;
        let baseline = returns.iter().sum::<f64>() / n;

        // Pass 2: accumulate gradients with respect to the log-softmax output.
        self.grads.clear();
        let coef = self.config.entropy_coef;
        let mut out_grad = vec![0.0; net.output_dim()];
        for ((traj, lps), g) in batch.iter().zip(&all_log_probs).zip(&returns) {
            let adv = g - baseline;
            for (t, lp) in lps.iter().enumerate() {
                for (j, (og, l)) in out_grad.iter_mut().zip(lp).enumerate() {
                    // d(-c H)/d logp_j = c p_j (logp_j + 1)
                    *og = coef * l.exp() * (l + 1.0) / n;
                    if j == traj.actions[t] {
                        *og -= adv / n;
                    }
                }
                if adv == 0.0 && coef == 0.0 {
                    continue;
                }
                net.backward_into(&traj.observations[t], &out_grad, &mut self.grads)?;
            }
        }
        self.adam.step_net(&mut self.policy.net, &self.grads)?;
        Ok(baseline)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvInstance, EnvModel, TabularMdp};
    use std::sync::Arc;

    fn bandit(rewards: [f64; 2]) -> EnvInstance {
        let mdp = TabularMdp::new(
            vec![vec![vec![1.0], vec![1.0]]],
            vec![rewards.to_vec()],
            vec![1.0],
            1,
            None,
        )
        .unwrap();
        EnvInstance::new(Arc::new(EnvModel::Tabular(mdp)), &SeedStream::new(0))
    }

    #[test]
    fn bandit_learns_better_arm() {
        let mut env = bandit([1.0, 0.0]);
        let seeds = SeedStream::new(3);
        let mut opt = Reinforce::for_model(env.model(), ReinforceConfig::default(), &seeds);
        for _ in 0..500 {
            opt.step(&mut env, RewardChannel::Environment).unwrap();
        }
        let p0 = opt.policy().log_probs(&[1.0], 0).unwrap()[0].exp();
        assert!(p0 >= 0.9, "p(action 0) = {p0}");
    }

    #[test]
    fn zero_reward_without_entropy_leaves_params() {
        let mut env = bandit([0.0, 0.0]);
        let config = ReinforceConfig {
            entropy_coef: 0.0,
            ..ReinforceConfig::default()
        };
        let mut opt = Reinforce::for_model(env.model(), config, &SeedStream::new(4));
        let before = opt.mlp_policy().clone();
        for _ in 0..10 {
            opt.step(&mut env, RewardChannel::Environment).unwrap();
        }
        assert_eq!(opt.mlp_policy(), &before);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let run = || {
            let mut env = bandit([0.3, -0.2]);
            let mut opt = Reinforce::for_model(env.model(), ReinforceConfig::default(), &SeedStream::new(5));
            for _ in 0..5 {
                opt.step(&mut env, RewardChannel::Environment).unwrap();
            }
            opt.mlp_policy().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wrong_action_width_is_rejected() {
        let env = bandit([1.0, 0.0]);
        let mut opt = Reinforce::new(1, 3, ReinforceConfig::default(), &SeedStream::new(0));
        let traj = Trajectory {
            observations: vec![vec![1.0], vec![1.0]],
            actions: vec![0],
            rewards: Some(vec![1.0]),
            terminal: true,
        };
        assert!(opt.update(env.model(), &[traj], RewardChannel::Environment).is_err());
    }
}
