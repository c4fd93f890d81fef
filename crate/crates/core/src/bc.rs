//! Behavioral cloning: maximum likelihood on expert state-action pairs.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adam::{AdamConfig, AdamState};
use crate::algorithm::ImitationAlgorithm;
use crate::data::{flatten, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{GradBuffer, Head, Mlp};
use crate::policy::{MlpPolicy, Policy};
use crate::seeds::{names, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

/// Supervised policy learner. One unit of `train` budget is one epoch.
#[derive(Debug, Clone)]
pub struct BcTrainer {
    config: BcConfig,
    policy: MlpPolicy,
    states: Vec<Vec<f64>>,
    actions: Vec<usize>,
    adam: AdamState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epochs_done: usize,
    metrics: Vec<serde_json::Value>,
}

impl BcTrainer {
    /// Fresh policy from the `policy-init` substream of `seeds`.
    pub fn new(
        obs_dim: usize,
        action_count: usize,
        states: Vec<Vec<f64>>,
        actions: Vec<usize>,
        config: BcConfig,
        seeds: &SeedStream,
    ) -> Result<Self> {
        let mut init = seeds.derive(names::POLICY_INIT).rng();
        let net = Mlp::new(&Mlp::default_widths(obs_dim, action_count), Head::LogSoftmax, &mut init);
        Self::with_policy(MlpPolicy::new(net)?, states, actions, config, seeds)
    }

    pub fn from_demos(
        obs_dim: usize,
        action_count: usize,
        demos: &[Trajectory],
        config: BcConfig,
        seeds: &SeedStream,
    ) -> Result<Self> {
        let batch = flatten(demos)?;
        Self::new(obs_dim, action_count, batch.states, batch.actions, config, seeds)
    }

    pub fn with_policy(
        policy: MlpPolicy,
        states: Vec<Vec<f64>>,
        actions: Vec<usize>,
        config: BcConfig,
        seeds: &SeedStream,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Empty("behavioral cloning demonstrations"));
        }
        if states.len() != actions.len() {
            return Err(Error::Dimension {
                what: "demonstration actions",
                expected: states.len(),
                got: actions.len(),
            });
        }
        if config.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        let k = policy.action_count();
        if let Some(&a) = actions.iter().find(|&&a| a >= k) {
            return Err(Error::InvalidAction {
                action: a,
                action_count: k,
            });
        }
        let adam = AdamState::for_net(AdamConfig::with_lr(config.lr), &policy.net);
        let order = (0..states.len()).collect();
        Ok(Self {
            config,
            policy,
            states,
            actions,
            adam,
            rng: seeds.derive(names::DATA_SHUFFLE).rng(),
            order,
            epochs_done: 0,
            metrics: Vec::new(),
        })
    }

    pub fn policy(&self) -> &MlpPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> MlpPolicy {
        self.policy
    }

    pub fn dataset_len(&self) -> usize {
        self.states.len()
    }

    /// Mean `-log pi(a|s)` over the whole training set.
    pub fn mean_nll(&self) -> Result<f64> {
        let mut total = 0.0;
        for (s, a) in self.states.iter().zip(&self.actions) {
            total -= self.policy.net.forward(s)?[*a];
        }
        Ok(total / self.states.len() as f64)
    }

    /// Runs `epochs` epochs of shuffled minibatch Adam and returns the
    /// training-set NLL after the last one.
    pub fn train_epochs(&mut self, epochs: usize) -> Result<f64> {
        let k = self.policy.net.output_dim();
        let mut grads = GradBuffer::zeros_like(&self.policy.net);
        let mut out_grad = vec![0.0; k];
        let mut last = self.mean_nll()?;
        for _ in 0..epochs {
            self.order.shuffle(&mut self.rng);
            for chunk in self.order.chunks(self.config.batch_size) {
                grads.clear();
                let scale = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    out_grad.iter_mut().for_each(|g| *g = 0.0);
                    out_grad[self.actions[i]] = -scale;
                    self.policy.net.backward_into(&self.states[i], &out_grad, &mut grads)?;
                }
                self.adam.step_net(&mut self.policy.net, &grads)?;
            }
            self.epochs_done += 1;
            let nll = self.mean_nll()?;
            if nll > last + 1e-12 {
                log::warn!(
                    "behavioral cloning loss rose from {last:.6} to {nll:.6} at epoch {}",
                    self.epochs_done
                );
            }
            self.metrics
                .push(json!({"epoch": self.epochs_done, "nll": nll}));
            last = nll;
        }
        Ok(last)
    }
}

/// Free-function form of [`BcTrainer::train_epochs`].
pub fn bc_train(trainer: &mut BcTrainer, epochs: usize) -> Result<f64> {
    trainer.train_epochs(epochs)
}

impl ImitationAlgorithm for BcTrainer {
    fn name(&self) -> &'static str {
        "bc"
    }

    fn train(&mut self, budget: usize) -> Result<()> {
        self.train_epochs(budget).map(|_| ())
    }

    fn current_policy(&self) -> &dyn Policy {
        &self.policy
    }

    fn metrics(&self) -> &[serde_json::Value] {
        &self.metrics
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, rollout, ExpertPolicy, GRIDWORLD};
    use crate::policy::one_hot;

    #[test]
    fn zero_policy_starts_at_log_four() {
        let policy = MlpPolicy::new(Mlp::zeros(&[25, 32, 32, 4], Head::LogSoftmax)).unwrap();
        let states = vec![one_hot(0, 25), one_hot(3, 25)];
        let trainer =
            BcTrainer::with_policy(policy, states, vec![1, 2], BcConfig::default(), &SeedStream::new(0)).unwrap();
        assert!((trainer.mean_nll().unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_demos_are_rejected() {
        let err = BcTrainer::new(4, 2, vec![], vec![], BcConfig::default(), &SeedStream::new(0));
        assert!(matches!(err, Err(Error::Empty(_))));
    }

    #[test]
    fn single_pair_loss_falls_monotonically() {
        let mut trainer = BcTrainer::new(
            3,
            3,
            vec![vec![1.0, 0.0, 0.0]; 4],
            vec![2; 4],
            BcConfig::default(),
            &SeedStream::new(1),
        )
        .unwrap();
        let mut prev = trainer.mean_nll().unwrap();
        for _ in 0..200 {
            let nll = trainer.train_epochs(1).unwrap();
            assert!(nll <= prev + 1e-12);
            prev = nll;
        }
        assert!(prev < 0.05, "{prev}");
    }

    #[test]
    fn gridworld_expert_is_cloned() {
        let seeds = SeedStream::new(2);
        let mut env = make_env(GRIDWORLD, &seeds).unwrap();
        let expert = ExpertPolicy::for_model(env.model());
        let demos = rollout(&expert, &mut env, 50, &mut seeds.derive("demo").rng()).unwrap();
        let mut trainer = BcTrainer::from_demos(25, 4, &demos, BcConfig::default(), &seeds).unwrap();
        let nll = trainer.train_epochs(200).unwrap();
        assert!(nll < 0.1, "nll = {nll}");
    }

    #[test]
    fn training_is_resumable() {
        let make = || {
            BcTrainer::new(
                2,
                2,
                vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]],
                vec![0, 1, 1],
                BcConfig { batch_size: 2, lr: 1e-2 },
                &SeedStream::new(3),
            )
            .unwrap()
        };
        let mut a = make();
        a.train(3).unwrap();
        a.train(4).unwrap();
        let mut b = make();
        b.train(7).unwrap();
        assert_eq!(a.policy(), b.policy());
    }
}
