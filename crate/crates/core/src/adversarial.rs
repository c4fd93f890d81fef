//! Adversarial imitation. GAIL and AIRL run the same training loop and differ
//! only in the [`Discriminator`] plugged into it.
//!
//! Each generator step collects rollouts, takes `disc_steps` binary
//! cross-entropy steps on balanced expert/generator batches (expert label 1),
//! then makes one policy update against the discriminator-derived reward.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adam::{AdamConfig, AdamState};
use crate::algorithm::ImitationAlgorithm;
use crate::data::Trajectory;
use crate::envs::{EnvInstance, EnvModel};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, GradBuffer, Head, Mlp};
use crate::policy::Policy;
use crate::policy_opt::{
    mean_env_return, strip_rewards, OptimizerConfig, PolicyOptimizer, ReinforceConfig, RewardChannel,
    RewardModel, StepContext,
};
use crate::seeds::SeedStream;

/// Network input for a state-action pair: the observation followed by the
/// one-hot action.
pub fn sa_input(obs: &[f64], action: usize, action_count: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(obs.len() + action_count);
    x.extend_from_slice(obs);
    x.extend((0..action_count).map(|a| if a == action { 1.0 } else { 0.0 }));
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorKind {
    Gail,
    Airl,
}

/// Maps a transition to a logit `z` (expert iff `z >= 0`) and a generator
/// reward. The network output `raw` enters the logit with unit slope.
pub trait Discriminator: Send + Sync {
    fn kind(&self) -> DiscriminatorKind;

    fn net(&self) -> &Mlp;

    fn net_mut(&mut self) -> &mut Mlp;

    fn action_count(&self) -> usize;

    fn logit_from_raw(&self, raw: f64, log_prob: f64) -> f64;

    fn reward_from_logit(&self, logit: f64) -> f64;

    fn raw(&self, obs: &[f64], action: usize) -> Result<f64> {
        Ok(self.net().forward(&sa_input(obs, action, self.action_count()))?[0])
    }

    fn logit(&self, step: &StepContext<'_>) -> Result<f64> {
        Ok(self.logit_from_raw(self.raw(step.obs, step.action)?, step.log_prob))
    }

    fn reward(&self, step: &StepContext<'_>) -> Result<f64> {
        Ok(self.reward_from_logit(self.logit(step)?))
    }
}

/// `D = sigmoid(net(s, a))`; reward `-log(1 - D) = softplus(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GailDiscriminator {
    net: Mlp,
    action_count: usize,
}

impl GailDiscriminator {
    pub fn new(net: Mlp, action_count: usize) -> Self {
        Self { net, action_count }
    }
}

impl Discriminator for GailDiscriminator {
    fn kind(&self) -> DiscriminatorKind {
        DiscriminatorKind::Gail
    }

    fn net(&self) -> &Mlp {
        &self.net
    }

    fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn action_count(&self) -> usize {
        self.action_count
    }

    fn logit_from_raw(&self, raw: f64, _log_prob: f64) -> f64 {
        raw
    }

    fn reward_from_logit(&self, logit: f64) -> f64 {
        gail_reward(logit)
    }
}

/// `-log(1 - sigmoid(z))`, computed without cancellation.
pub fn gail_reward(logit: f64) -> f64 {
    softplus(logit)
}

/// Logit `f(s, a) - log pi(a|s)`; the training reward is the logit itself
/// and `f` is the recovered reward.
#[derive(Debug, Clone, PartialEq)]
pub struct AirlDiscriminator {
    net: Mlp,
    action_count: usize,
}

impl AirlDiscriminator {
    pub fn new(net: Mlp, action_count: usize) -> Self {
        Self { net, action_count }
    }

    /// Frozen copy of `f`.
    pub fn recovered_reward(&self) -> AirlReward {
        AirlReward {
            net: self.net.clone(),
            action_count: self.action_count,
        }
    }
}

impl Discriminator for AirlDiscriminator {
    fn kind(&self) -> DiscriminatorKind {
        DiscriminatorKind::Airl
    }

    fn net(&self) -> &Mlp {
        &self.net
    }

    fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn action_count(&self) -> usize {
        self.action_count
    }

    fn logit_from_raw(&self, raw: f64, log_prob: f64) -> f64 {
        raw - log_prob
    }

    fn reward_from_logit(&self, logit: f64) -> f64 {
        logit
    }
}

/// The learned `f(s, a)`, independent of any policy.
#[derive(Debug, Clone, PartialEq)]
pub struct AirlReward {
    pub net: Mlp,
    pub action_count: usize,
}

impl RewardModel for AirlReward {
    fn reward(&self, step: &StepContext<'_>) -> Result<f64> {
        Ok(self.net.forward(&sa_input(step.obs, step.action, self.action_count))?[0])
    }
}

struct DiscReward<'a>(&'a dyn Discriminator);

impl RewardModel for DiscReward<'_> {
    fn reward(&self, step: &StepContext<'_>) -> Result<f64> {
        self.0.reward(step)
    }
}

/// One transition with its timestep; rewards are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub next_obs: Vec<f64>,
    pub t: usize,
}

pub fn transitions(trajectories: &[Trajectory]) -> Vec<Transition> {
    trajectories
        .iter()
        .flat_map(|traj| {
            (0..traj.len()).map(move |t| Transition {
                obs: traj.observations[t].clone(),
                action: traj.actions[t],
                next_obs: traj.observations[t + 1].clone(),
                t,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Discriminator,
    Generator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarialConfig {
    /// Discriminator steps per generator step.
    pub disc_steps: usize,
    /// Discriminator batch size, split evenly between expert and generator.
    pub disc_batch: usize,
    pub disc_lr: f64,
    pub generator: OptimizerConfig,
    /// Consecutive iterations at accuracy 1.0 before warning.
    pub divergence_window: usize,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            disc_steps: 2,
            disc_batch: 128,
            disc_lr: 1e-3,
            generator: OptimizerConfig::Reinforce(ReinforceConfig::default()),
            divergence_window: 50,
        }
    }
}

/// Shared GAIL/AIRL trainer. One unit of `train` budget is one generator
/// update.
pub struct AdversarialTrainer {
    config: AdversarialConfig,
    disc: Box<dyn Discriminator>,
    disc_adam: AdamState,
    generator: Box<dyn PolicyOptimizer>,
    env: EnvInstance,
    expert: Vec<Transition>,
    rng: ChaCha8Rng,
    iter: usize,
    saturated_run: usize,
    trace: Vec<UpdateKind>,
    metrics: Vec<serde_json::Value>,
}

impl AdversarialTrainer {
    /// A trainer with a fresh discriminator of the requested kind.
    pub fn new(
        kind: DiscriminatorKind,
        env: EnvInstance,
        demos: &[Trajectory],
        config: AdversarialConfig,
        seeds: &SeedStream,
    ) -> Result<Self> {
        let model = env.model();
        let widths = Mlp::default_widths(model.obs_dim() + model.action_count(), 1);
        let net = Mlp::new(&widths, Head::Identity, &mut seeds.derive("disc-init").rng());
        let a_n = model.action_count();
        let disc: Box<dyn Discriminator> = match kind {
            DiscriminatorKind::Gail => Box::new(GailDiscriminator::new(net, a_n)),
            DiscriminatorKind::Airl => Box::new(AirlDiscriminator::new(net, a_n)),
        };
        let generator = config.generator.build(model, seeds)?;
        Self::with_parts(disc, generator, env, demos, config, seeds)
    }

    pub fn with_parts(
        disc: Box<dyn Discriminator>,
        generator: Box<dyn PolicyOptimizer>,
        env: EnvInstance,
        demos: &[Trajectory],
        config: AdversarialConfig,
        seeds: &SeedStream,
    ) -> Result<Self> {
        if config.disc_batch < 2 {
            return Err(Error::InvalidArgument("disc_batch must be at least 2".into()));
        }
        let model = env.model();
        let expected = model.obs_dim() + model.action_count();
        if disc.net().input_dim() != expected || disc.net().output_dim() != 1 {
            return Err(Error::Dimension {
                what: "discriminator input width",
                expected,
                got: disc.net().input_dim(),
            });
        }
        let mut demos = demos.to_vec();
        strip_rewards(&mut demos);
        for (i, d) in demos.iter().enumerate() {
            d.validate(Some(model.action_count()))
                .map_err(|reason| Error::MalformedTrajectory { index: i, reason })?;
        }
        let expert = transitions(&demos);
        if expert.is_empty() {
            return Err(Error::Empty("adversarial expert demonstrations"));
        }
        let disc_adam = AdamState::for_net(AdamConfig::with_lr(config.disc_lr), disc.net());
        Ok(Self {
            config,
            disc,
            disc_adam,
            generator,
            env,
            expert,
            rng: seeds.derive("adversarial-batches").rng(),
            iter: 0,
            saturated_run: 0,
            trace: Vec::new(),
            metrics: Vec::new(),
        })
    }

    pub fn discriminator(&self) -> &dyn Discriminator {
        &*self.disc
    }

    pub fn generator(&self) -> &dyn PolicyOptimizer {
        &*self.generator
    }

    pub fn env_model(&self) -> &EnvModel {
        self.env.model()
    }

    /// Sequence of updates performed so far.
    pub fn trace(&self) -> &[UpdateKind] {
        &self.trace
    }

    /// `f` when the discriminator is AIRL's, evaluated through the reward
    /// net alone.
    pub fn recovered_reward(&self) -> Option<AirlReward> {
        match self.disc.kind() {
            DiscriminatorKind::Airl => Some(AirlReward {
                net: self.disc.net().clone(),
                action_count: self.disc.action_count(),
            }),
            DiscriminatorKind::Gail => None,
        }
    }

    fn logit_of(&self, tr: &Transition) -> Result<(Vec<f64>, f64)> {
        let log_prob = self.generator.policy().log_probs(&tr.obs, tr.t)?[tr.action];
        let x = sa_input(&tr.obs, tr.action, self.disc.action_count());
        let raw = self.disc.net().forward(&x)?[0];
        Ok((x, self.disc.logit_from_raw(raw, log_prob)))
    }

    /// Mean cross-entropy and accuracy of the current discriminator on the
    /// given batches.
    pub fn disc_metrics(&self, expert: &[Transition], generated: &[Transition]) -> Result<(f64, f64)> {
        if expert.is_empty() || generated.is_empty() {
            return Err(Error::Empty("discriminator batch"));
        }
        let mut loss = 0.0;
        let mut correct = 0usize;
        for tr in expert {
            let (_, z) = self.logit_of(tr)?;
            loss += softplus(-z);
            correct += usize::from(z >= 0.0);
        }
        for tr in generated {
            let (_, z) = self.logit_of(tr)?;
            loss += softplus(z);
            correct += usize::from(z < 0.0);
        }
        let n = (expert.len() + generated.len()) as f64;
        Ok((loss / n, correct as f64 / n))
    }

    /// One Adam step on mean cross-entropy over the concatenated batches.
    /// Returns the post-step loss and accuracy on the same batches.
    pub fn disc_update(&mut self, expert: &[Transition], generated: &[Transition]) -> Result<(f64, f64)> {
        if expert.is_empty() || generated.is_empty() {
            return Err(Error::Empty("discriminator batch"));
        }
        let n = (expert.len() + generated.len()) as f64;
        let mut grads = GradBuffer::zeros_like(self.disc.net());
        for (batch, label) in [(expert, 1.0), (generated, 0.0)] {
            for tr in batch {
                let (x, z) = self.logit_of(tr)?;
                let g = (sigmoid(z) - label) / n;
                self.disc.net().backward_into(&x, &[g], &mut grads)?;
            }
        }
        self.disc_adam.step_net(self.disc.net_mut(), &grads)?;
        self.trace.push(UpdateKind::Discriminator);
        self.disc_metrics(expert, generated)
    }


    /// Accuracy on fresh expert samples and fresh generator rollouts.
    pub fn fresh_accuracy(&mut self, per_class: usize) -> Result<f64> {
        let episodes = per_class.div_ceil(self.env.horizon()).max(1);
        let rollouts = self.generator.collect(&mut self.env, episodes)?;
        let pool = transitions(&rollouts);
        let e = sample(&mut self.rng, &self.expert, per_class);
        let g = sample(&mut self.rng, &pool, per_class);
        Ok(self.disc_metrics(&e, &g)?.1)
    }

    /// One iteration: rollouts, discriminator steps, one generator update.
    pub fn step(&mut self) -> Result<()> {
        let n_eps = self.generator.episodes_per_update();
        let mut batch = self.generator.collect(&mut self.env, n_eps)?;
        let env_return = mean_env_return(&batch);
        strip_rewards(&mut batch);
        let pool = transitions(&batch);
        let half = self.config.disc_batch / 2;
        let mut disc_loss = f64::NAN;
        let mut disc_acc = f64::NAN;
        for _ in 0..self.config.disc_steps {
            let e = sample(&mut self.rng, &self.expert, half);
            let g = sample(&mut self.rng, &pool, half);
            (disc_loss, disc_acc) = self.disc_update(&e, &g)?;
        }

        let model = self.env.shared_model();
        self.generator
            .update(&model, &batch, RewardChannel::Model(&DiscReward(&*self.disc)))?;
        self.trace.push(UpdateKind::Generator);

        if disc_acc >= 1.0 {
            self.saturated_run += 1;
            if self.saturated_run == self.config.divergence_window {
                log::warn!(
                    "discriminator accuracy has been 1.0 for {} iterations (iteration {}); training may have diverged",
                    self.saturated_run,
                    self.iter
                );
            }
        } else {
            self.saturated_run = 0;
        }
        self.metrics.push(json!({
            "iter": self.iter,
            "disc_loss": disc_loss,
            "disc_acc": disc_acc,
            "mean_return": env_return,
        }));
        self.iter += 1;
        Ok(())
    }
}

fn sample(rng: &mut ChaCha8Rng, pool: &[Transition], n: usize) -> Vec<Transition> {
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
}

/// Runs `total_gen_steps` iterations.
pub fn adversarial_train(trainer: &mut AdversarialTrainer, total_gen_steps: usize) -> Result<()> {
    for _ in 0..total_gen_steps {
        trainer.step()?;
    }
    Ok(())
}

impl ImitationAlgorithm for AdversarialTrainer {
    fn name(&self) -> &'static str {
        match self.disc.kind() {
            DiscriminatorKind::Gail => "gail",
            DiscriminatorKind::Airl => "airl",
        }
    }

    fn train(&mut self, budget: usize) -> Result<()> {
        adversarial_train(self, budget)
    }

    fn current_policy(&self) -> &dyn Policy {
        self.generator.policy()
    }

    fn metrics(&self) -> &[serde_json::Value] {
        &self.metrics
    }
}
