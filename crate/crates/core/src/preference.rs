//! Reward learning from pairwise preferences over trajectory fragments.
//!
//! A Bradley-Terry model `P(a > b) = sigmoid(R_a - R_b)`, with `R` the sum of
//! modeled per-step rewards over a fragment, is fit by cross-entropy to labels
//! from a [`SyntheticLabeler`]. The policy is optimized against the model only.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::adam::{AdamConfig, AdamState};
use crate::adversarial::sa_input;
use crate::algorithm::ImitationAlgorithm;
use crate::data::{read_records, Trajectory};
use crate::envs::{EnvInstance, EnvModel};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, GradBuffer, Head, Mlp};
use crate::policy::Policy;
use crate::policy_opt::{strip_rewards, OptimizerConfig, TabularSolver, PolicyOptimizer, RewardChannel, RewardModel, StepContext};
use crate::seeds::{names, SeedStream};

/// Contiguous slice of a trajectory, without rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fragment {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub source: usize,
    pub offset: usize,
}

impl Fragment {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `label` is 1.0 when `a` is preferred, 0.0 when `b` is, 0.5 for a tie.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub a: Fragment,
    pub b: Fragment,
    pub label: f64,
}

/// Draws `n_pairs` unlabeled pairs (label NaN). Each fragment comes from an
/// independently chosen trajectory at a uniform offset.
pub fn sample_fragments(
    trajectories: &[Trajectory],
    k: usize,
    n_pairs: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PreferencePair>> {
    if n_pairs == 0 {
        return Ok(Vec::new());
    }
    if k == 0 {
        return Err(Error::InvalidArgument("fragment length must be positive".into()));
    }
    if trajectories.is_empty() {
        return Err(Error::Empty("trajectories for fragment sampling"));
    }
    let shortest = trajectories.iter().map(Trajectory::len).min().unwrap_or(0);
    if k > shortest {
        return Err(Error::InvalidArgument(format!(
            "fragment length {k} exceeds shortest trajectory ({shortest} steps)"
        )));
    }
    let draw = |rng: &mut dyn rand::RngCore| {
        let source = rng.gen_range(0..trajectories.len());
        let traj = &trajectories[source];
        let offset = rng.gen_range(0..=traj.len() - k);
        Fragment {
            observations: traj.observations[offset..=offset + k].to_vec(),
            actions: traj.actions[offset..offset + k].to_vec(),
            source,
            offset,
        }
    };
    Ok((0..n_pairs)
        .map(|_| {
            let a = draw(rng);
            let b = draw(rng);
            PreferencePair { a, b, label: f64::NAN }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardInput {
    State,
    StateAction,
}

/// Per-step reward network `r(s)` or `r(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRewardNet {
    pub net: Mlp,
    pub input: RewardInput,
    pub action_count: usize,
}

impl PreferenceRewardNet {
    pub fn new(obs_dim: usize, action_count: usize, input: RewardInput, seeds: &SeedStream) -> Self {
        let width = match input {
            RewardInput::State => obs_dim,
            RewardInput::StateAction => obs_dim + action_count,
        };
        let net = Mlp::new(
            &Mlp::default_widths(width, 1),
            Head::Identity,
            &mut seeds.derive("reward-init").rng(),
        );
        Self {
            net,
            input,
            action_count,
        }
    }

    fn input_for(&self, obs: &[f64], action: usize) -> Vec<f64> {
        match self.input {
            RewardInput::State => obs.to_vec(),
            RewardInput::StateAction => sa_input(obs, action, self.action_count),
        }
    }

    pub fn step_reward(&self, obs: &[f64], action: usize) -> Result<f64> {
        Ok(self.net.forward(&self.input_for(obs, action))?[0])
    }

    pub fn fragment_return(&self, fragment: &Fragment) -> Result<f64> {
        let mut total = 0.0;
        for (obs, a) in fragment.observations.iter().zip(&fragment.actions) {
            total += self.step_reward(obs, *a)?;
        }
        Ok(total)
    }

    /// Adds `scale * d R(fragment) / d params` to `grads`.
    fn accumulate(&self, fragment: &Fragment, scale: f64, grads: &mut GradBuffer) -> Result<()> {
        for (obs, a) in fragment.observations.iter().zip(&fragment.actions) {
            self.net.backward_into(&self.input_for(obs, *a), &[scale], grads)?;
        }
        Ok(())
    }
}

impl RewardModel for PreferenceRewardNet {
    fn reward(&self, step: &StepContext<'_>) -> Result<f64> {
        self.step_reward(step.obs, step.action)
    }
}

/// `log sigmoid(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Probability that `a` is preferred, from fragment return sums.
pub fn bradley_terry_from_returns(r_a: f64, r_b: f64) -> f64 {
    log_sigmoid(r_a - r_b).exp()
}

pub fn bradley_terry_prob(model: &PreferenceRewardNet, pair: &PreferencePair) -> Result<f64> {
    check_pair(pair)?;
    Ok(bradley_terry_from_returns(
        model.fragment_return(&pair.a)?,
        model.fragment_return(&pair.b)?,
    ))
}

fn check_pair(pair: &PreferencePair) -> Result<()> {
    if pair.a.len() != pair.b.len() {
        return Err(Error::Dimension {
            what: "fragment length",
            expected: pair.a.len(),
            got: pair.b.len(),
        });
    }
    Ok(())
}

/// Cross-entropy of the Bradley-Terry prediction against the label.
fn pair_loss(delta: f64, label: f64) -> f64 {
    -(label * log_sigmoid(delta) + (1.0 - label) * log_sigmoid(-delta))
}

/// Mean cross-entropy over `pairs`.
pub fn preference_loss(model: &PreferenceRewardNet, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("preference pairs"));
    }
    let mut total = 0.0;
    for p in pairs {
        check_pair(p)?;
        let delta = model.fragment_return(&p.a)? - model.fragment_return(&p.b)?;
        total += pair_loss(delta, p.label);
    }
    Ok(total / pairs.len() as f64)
}

/// Fraction of non-tied pairs whose preferred fragment the model ranks higher.
/// `None` when every pair is a tie.
pub fn preference_accuracy(model: &PreferenceRewardNet, pairs: &[PreferencePair]) -> Result<Option<f64>> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for p in pairs.iter().filter(|p| p.label != 0.5) {
        let delta = model.fragment_return(&p.a)? - model.fragment_return(&p.b)?;
        total += 1;
        hits += usize::from((delta > 0.0) == (p.label > 0.5));
    }
    Ok((total > 0).then(|| hits as f64 / total as f64))
}

/// One epoch of shuffled minibatch Adam steps on the cross-entropy. Returns
/// the mean of the per-minibatch losses measured before each step.
pub fn reward_model_update(
    model: &mut PreferenceRewardNet,
    pairs: &[PreferencePair],
    adam: &mut AdamState,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("preference pairs"));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(rng);
    let mut grads = GradBuffer::zeros_like(&model.net);
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size.max(1)) {
        grads.clear();
        let mut loss = 0.0;
        let n = chunk.len() as f64;
        for &i in chunk {
            let p = &pairs[i];
            check_pair(p)?;
            let delta = model.fragment_return(&p.a)? - model.fragment_return(&p.b)?;
            loss += pair_loss(delta, p.label);
            // d loss / d delta = sigmoid(delta) - label
            let g = (sigmoid(delta) - p.label) / n;
            model.accumulate(&p.a, g, &mut grads)?;
            model.accumulate(&p.b, -g, &mut grads)?;
        }
        adam.step_net(&mut model.net, &grads)?;
        total += loss / n;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Stand-in for a human: prefers the fragment with the larger true return.
pub struct SyntheticLabeler {
    model: Arc<EnvModel>,
    /// 0 gives deterministic argmax labels; otherwise `P(a) = sigmoid(dR / tau)`.
    pub temperature: f64,
    pub tie_eps: f64,
    rng: ChaCha8Rng,
    queries: usize,
}

impl SyntheticLabeler {
    pub fn new(model: Arc<EnvModel>, temperature: f64, tie_eps: f64, seeds: &SeedStream) -> Result<Self> {
        if temperature.is_nan() || tie_eps.is_nan() || temperature < 0.0 || tie_eps < 0.0 {
            return Err(Error::InvalidArgument(
                "labeler temperature and tie threshold must be non-negative".into(),
            ));
        }
        Ok(Self {
            model,
            temperature,
            tie_eps,
            rng: seeds.derive("labeler").rng(),
            queries: 0,
        })
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn true_return(&self, fragment: &Fragment) -> Result<f64> {
        let mut total = 0.0;
        for (obs, a) in fragment.observations.iter().zip(&fragment.actions) {
            total += self.model.true_reward(obs, *a)?;
        }
        Ok(total)
    }

    pub fn label(&mut self, a: &Fragment, b: &Fragment) -> Result<f64> {
        self.queries += 1;
        let delta = self.true_return(a)? - self.true_return(b)?;
        if delta.abs() <= self.tie_eps {
            return Ok(0.5);
        }
        if self.temperature == 0.0 {
            return Ok(if delta > 0.0 { 1.0 } else { 0.0 });
        }
        let p = sigmoid(delta / self.temperature);
        Ok(if self.rng.gen::<f64>() < p { 1.0 } else { 0.0 })
    }

    pub fn label_all(&mut self, pairs: &mut [PreferencePair]) -> Result<()> {
        for p in pairs {
            p.label = self.label(&p.a, &p.b)?;
        }
        Ok(())
    }
}

pub fn save_pairs(pairs: &[PreferencePair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>> {
    read_records(path.as_ref(), |value| {
        let pair: PreferencePair = serde_json::from_value(value).map_err(|e| e.to_string())?;
        if ![0.0, 0.5, 1.0].contains(&pair.label) {
            return Err(format!("label {} is not one of 0, 0.5, 1", pair.label));
        }
        if pair.a.len() != pair.b.len() {
            return Err("fragments differ in length".into());
        }
        Ok(pair)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreferenceConfig {
    pub fragment_len: usize,
    pub pairs_per_round: usize,
    /// Rollouts of the current policy collected each round for fragments.
    pub episodes_per_round: usize,
    /// Policy-optimizer updates per round.
    pub gen_steps_per_round: usize,
    pub reward_epochs: usize,
    pub reward_lr: f64,
    pub reward_batch: usize,
    pub temperature: f64,
    pub tie_eps: f64,
    /// Share of each round's pairs kept out of reward training.
    pub holdout_fraction: f64,
    pub input: RewardInput,
    /// Defaults to a soft tabular solver on tabular environments, so the
    /// policy keeps visiting states the reward model has not ranked yet, and
    /// to [`OptimizerConfig::default_for`] otherwise.
    pub optimizer: Option<OptimizerConfig>,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        Self {
            fragment_len: 5,
            pairs_per_round: 50,
            episodes_per_round: 16,
            gen_steps_per_round: 1,
            reward_epochs: 20,
            reward_lr: 1e-2,
            reward_batch: 32,
            temperature: 0.0,
            tie_eps: 1e-9,
            holdout_fraction: 0.2,
            input: RewardInput::State,
            optimizer: None,
        }
    }
}

impl PreferenceConfig {
    pub fn optimizer_for(&self, model: &EnvModel) -> OptimizerConfig {
        self.optimizer.unwrap_or(if model.is_tabular() {
            OptimizerConfig::Tabular {
                solver: TabularSolver::Soft { temperature: 0.1 },
            }
        } else {
            OptimizerConfig::default_for(model)
        })
    }
}

/// DRLHP outer loop. One unit of `train` budget is one round: collect
/// rollouts, query labels, refit the reward model, improve the policy.
pub struct PreferenceTrainer {
    config: PreferenceConfig,
    env: EnvInstance,
    labeler: SyntheticLabeler,
    reward: PreferenceRewardNet,
    reward_adam: AdamState,
    optimizer: Box<dyn PolicyOptimizer>,
    fragment_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    train_pairs: Vec<PreferencePair>,
    heldout_pairs: Vec<PreferencePair>,
    round: usize,
    metrics: Vec<serde_json::Value>,
}

impl PreferenceTrainer {
    pub fn new(env: EnvInstance, config: PreferenceConfig, seeds: &SeedStream) -> Result<Self> {
        let labeler = SyntheticLabeler::new(env.shared_model(), config.temperature, config.tie_eps, seeds)?;
        let model = env.model();
        let optimizer = config.optimizer_for(model).build(model, seeds)?;
        Self::with_parts(env, labeler, optimizer, config, seeds)
    }

    pub fn with_parts(
        env: EnvInstance,
        labeler: SyntheticLabeler,
        optimizer: Box<dyn PolicyOptimizer>,
        config: PreferenceConfig,
        seeds: &SeedStream,
    ) -> Result<Self> {
        if config.fragment_len == 0 || config.fragment_len > env.horizon() {
            return Err(Error::InvalidArgument(format!(
                "fragment_len must lie in 1..={}",
                env.horizon()
            )));
        }
        if !(0.0..1.0).contains(&config.holdout_fraction) {
            return Err(Error::InvalidArgument("holdout_fraction must lie in [0, 1)".into()));
        }
        let model = env.model();
        let reward = PreferenceRewardNet::new(model.obs_dim(), model.action_count(), config.input, seeds);
        let reward_adam = AdamState::for_net(AdamConfig::with_lr(config.reward_lr), &reward.net);
        Ok(Self {
            config,
            env,
            labeler,
            reward,
            reward_adam,
            optimizer,
            fragment_rng: seeds.derive(names::FRAGMENT_SAMPLING).rng(),
            shuffle_rng: seeds.derive(names::DATA_SHUFFLE).rng(),
            train_pairs: Vec::new(),
            heldout_pairs: Vec::new(),
            round: 0,
            metrics: Vec::new(),
        })
    }

    pub fn reward_model(&self) -> &PreferenceRewardNet {
        &self.reward
    }

    pub fn queries(&self) -> usize {
        self.labeler.queries()
    }

    pub fn train_pairs(&self) -> &[PreferencePair] {
        &self.train_pairs
    }

    pub fn heldout_pairs(&self) -> &[PreferencePair] {
        &self.heldout_pairs
    }

    /// Accuracy on held-out non-tied pairs.
    pub fn heldout_accuracy(&self) -> Result<Option<f64>> {
        preference_accuracy(&self.reward, &self.heldout_pairs)
    }

    pub fn round(&mut self) -> Result<()> {
        let c = self.config;
        let mut rollouts = self.optimizer.collect(&mut self.env, c.episodes_per_round)?;
        strip_rewards(&mut rollouts);
        let mut pairs = sample_fragments(&rollouts, c.fragment_len, c.pairs_per_round, &mut self.fragment_rng)?;
        self.labeler.label_all(&mut pairs)?;
        let n_held = (pairs.len() as f64 * c.holdout_fraction).round() as usize;
        let split = pairs.len() - n_held;
        self.heldout_pairs.extend(pairs.drain(split..));
        self.train_pairs.extend(pairs);

        let mut loss = f64::NAN;
        if !self.train_pairs.is_empty() {
            for _ in 0..c.reward_epochs {
                loss = reward_model_update(
                    &mut self.reward,
                    &self.train_pairs,
                    &mut self.reward_adam,
                    c.reward_batch,
                    &mut self.shuffle_rng,
                )?;
            }
        }
        let report = self
            .optimizer
            .improve(&mut self.env, RewardChannel::Model(&self.reward), c.gen_steps_per_round)?;
        let acc = self.heldout_accuracy()?;
        self.metrics.push(json!({
            "round": self.round,
            "queries": self.labeler.queries(),
            "reward_loss": loss,
            "heldout_acc": acc,
            "mean_return": report.mean_env_return,
        }));
        self.round += 1;
        Ok(())
    }
}

/// Runs `rounds` rounds.
pub fn drlhp_train(trainer: &mut PreferenceTrainer, rounds: usize) -> Result<()> {
    for _ in 0..rounds {
        trainer.round()?;
    }
    Ok(())
}

impl ImitationAlgorithm for PreferenceTrainer {
    fn name(&self) -> &'static str {
        "drlhp"
    }

    fn train(&mut self, budget: usize) -> Result<()> {
        drlhp_train(self, budget)
    }

    fn current_policy(&self) -> &dyn Policy {
        self.optimizer.policy()
    }

    fn metrics(&self) -> &[serde_json::Value] {
        &self.metrics
    }
}
