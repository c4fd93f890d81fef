//! DAgger: roll out a per-step mixture of expert and learner, label every
//! visited state with the expert's action, aggregate and retrain.

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::sync::Arc;

use crate::algorithm::ImitationAlgorithm;
use crate::bc::{BcConfig, BcTrainer};
use crate::envs::{run_episode, EnvInstance, ExpertPolicy};
use crate::error::{Error, Result};
use crate::policy::{MlpPolicy, Policy, UniformPolicy};
use crate::seeds::SeedStream;

/// Queryable demonstrator: observation and timestep to action index.
pub trait ExpertHandle: Send + Sync {
    fn label(&self, obs: &[f64], t: usize) -> Result<usize>;
}

impl ExpertHandle for ExpertPolicy {
    fn label(&self, obs: &[f64], t: usize) -> Result<usize> {
        ExpertPolicy::label(self, obs, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaggerConfig {
    pub episodes_per_round: usize,
    /// `beta_i = beta_decay^i`.
    pub beta_decay: f64,
    pub epochs_per_round: usize,
    pub bc: BcConfig,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        Self {
            episodes_per_round: 10,
            beta_decay: 0.5,
            epochs_per_round: 200,
            bc: BcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub dataset_size: usize,
    pub beta: f64,
    pub nll: f64,
}

/// Interactive imitation learner. One unit of `train` budget is one round.
pub struct DaggerTrainer {
    config: DaggerConfig,
    env: EnvInstance,
    expert: Arc<dyn ExpertHandle>,
    seeds: SeedStream,
    rng: ChaCha8Rng,
    states: Vec<Vec<f64>>,
    actions: Vec<usize>,
    round: usize,
    learner: Option<BcTrainer>,
    placeholder: UniformPolicy,
    metrics: Vec<serde_json::Value>,
}

impl DaggerTrainer {
    pub fn new(
        env: EnvInstance,
        expert: Arc<dyn ExpertHandle>,
        config: DaggerConfig,
        seeds: &SeedStream,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.beta_decay) {
            return Err(Error::InvalidArgument(format!(
                "beta_decay must lie in [0, 1], got {}",
                config.beta_decay
            )));
        }
        if config.episodes_per_round == 0 {
            return Err(Error::InvalidArgument("episodes_per_round must be positive".into()));
        }
        let placeholder = UniformPolicy {
            actions: env.action_count(),
        };
        Ok(Self {
            config,
            env,
            expert,
            seeds: *seeds,
            rng: seeds.derive("dagger-mixture").rng(),
            states: Vec::new(),
            actions: Vec::new(),
            round: 0,
            learner: None,
            placeholder,
            metrics: Vec::new(),
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn beta(&self) -> f64 {
        self.config.beta_decay.powi(self.round as i32)
    }

    pub fn dataset(&self) -> (&[Vec<f64>], &[usize]) {
        (&self.states, &self.actions)
    }

    pub fn learner(&self) -> Option<&MlpPolicy> {
        self.learner.as_ref().map(BcTrainer::policy)
    }

    /// The BC seed stream used to retrain after round `round`.
    pub fn round_seeds(seeds: &SeedStream, round: usize) -> SeedStream {
        seeds.derive_indexed("round", round)
    }

    pub fn dagger_round(&mut self) -> Result<RoundSummary> {
        let beta = self.beta();
        let expert = Arc::clone(&self.expert);
        let learner: &dyn Policy = match &self.learner {
            Some(bc) => bc.policy(),
            None => &self.placeholder,
        };
        for _ in 0..self.config.episodes_per_round {
            let rng: &mut dyn RngCore = &mut self.rng;
            let traj = run_episode(&mut self.env, rng, |obs, t, rng| {
                let label = expert.label(obs, t)?;
                self.states.push(obs.to_vec());
                self.actions.push(label);
                if rng.gen::<f64>() < beta {
                    Ok(label)
                } else {
                    learner.act(obs, t, rng)
                }
            })?;
            debug_assert_eq!(traj.len(), self.env.horizon());
        }
        let model = self.env.model();
        let mut bc = BcTrainer::new(
            model.obs_dim(),
            model.action_count(),
            self.states.clone(),
            self.actions.clone(),
            self.config.bc,
            &Self::round_seeds(&self.seeds, self.round),
        )?;
        let nll = bc.train_epochs(self.config.epochs_per_round)?;
        self.learner = Some(bc);
        let summary = RoundSummary {
            round: self.round,
            dataset_size: self.states.len(),
            beta,
            nll,
        };
        self.metrics.push(json!({
            "round": summary.round,
            "dataset_size": summary.dataset_size,
            "beta": summary.beta,
            "nll": summary.nll,
        }));
        self.round += 1;
        Ok(summary)
    }
}

impl ImitationAlgorithm for DaggerTrainer {
    fn name(&self) -> &'static str {
        "dagger"
    }

    fn train(&mut self, budget: usize) -> Result<()> {
        for _ in 0..budget {
            self.dagger_round()?;
        }
        Ok(())
    }

    fn current_policy(&self) -> &dyn Policy {
        match &self.learner {
            Some(bc) => bc.policy(),
            None => &self.placeholder,
        }
    }

    fn metrics(&self) -> &[serde_json::Value] {
        &self.metrics
    }
}
