//! Density-estimation IRL baseline: reward is the log-density of expert
//! states (or state-action pairs), clipped below at a floor.

use serde::{Deserialize, Serialize};
use serde_json::json;
use std::sync::Arc;

use crate::algorithm::ImitationAlgorithm;
use crate::data::Trajectory;
use crate::envs::{EnvInstance, EnvModel};
use crate::error::{Error, Result};
use crate::nn::log_sum_exp;
use crate::policy::{decode_one_hot, Policy};
use crate::policy_opt::{OptimizerConfig, PolicyOptimizer, RewardChannel, RewardModel, StepContext};
use crate::seeds::SeedStream;

pub const DEFAULT_FLOOR: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    State,
    StateAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// `sigma * N^(-1 / (d + 4))`, sigma the mean per-dimension standard deviation.
    Scott,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Estimator {
    /// Laplace-smoothed visit counts over a finite state space.
    Histogram { alpha: f64, state_count: usize, action_count: usize },
    /// Gaussian kernel density on raw observations.
    Kde { bandwidth: Bandwidth },
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Histogram {
        alpha: f64,
        state_count: usize,
        action_count: usize,
        counts: Vec<f64>,
    },
    Kde {
        h: f64,
        points: Vec<Vec<f64>>,
        actions: Vec<usize>,
    },
}

/// Fitted, immutable log-density reward.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityReward {
    mode: DensityMode,
    floor: f64,
    n: usize,
    fitted: Fitted,
}

/// Fits `estimator` to the states `s_t`, `t < T`, of every demo (paired with
/// the action taken in state-action mode).
pub fn density_fit(
    demos: &[Trajectory],
    mode: DensityMode,
    estimator: Estimator,
    floor: f64,
) -> Result<DensityReward> {
    if demos.is_empty() || demos.iter().all(|d| d.is_empty()) {
        return Err(Error::Empty("density demonstrations"));
    }
    let mut points = Vec::new();
    let mut actions = Vec::new();
    for (i, traj) in demos.iter().enumerate() {
        traj.validate(None)
            .map_err(|reason| Error::MalformedTrajectory { index: i, reason })?;
        points.extend(traj.observations[..traj.len()].iter().cloned());
        actions.extend_from_slice(&traj.actions);
    }
    let n = points.len();
    let fitted = match estimator {
        Estimator::Histogram {
            alpha,
            state_count,
            action_count,
        } => {
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(Error::InvalidArgument(format!("alpha must be non-negative, got {alpha}")));
            }
            let cells = match mode {
                DensityMode::State => state_count,
                DensityMode::StateAction => state_count * action_count,
            };
            let mut counts = vec![0.0; cells];
            for (obs, &a) in points.iter().zip(&actions) {
                let s = decode_one_hot(obs, state_count)?;
                if a >= action_count {
                    return Err(Error::InvalidAction {
                        action: a,
                        action_count,
                    });
                }
                let cell = match mode {
                    DensityMode::State => s,
                    DensityMode::StateAction => s * action_count + a,
                };
                counts[cell] += 1.0;
            }
            Fitted::Histogram {
                alpha,
                state_count,
                action_count,
                counts,
            }
        }
        Estimator::Kde { bandwidth } => {
            let h = match bandwidth {
                Bandwidth::Fixed(h) => h,
                Bandwidth::Scott => scott_bandwidth(&points),
            };
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
            }
            Fitted::Kde { h, points, actions }
        }
    };
    Ok(DensityReward {
        mode,
        floor,
        n,
        fitted,
    })
}

fn scott_bandwidth(points: &[Vec<f64>]) -> f64 {
    let n = points.len() as f64;
    let d = points[0].len();
    let mut sigma = 0.0;
    for k in 0..d {
        let mean = points.iter().map(|p| p[k]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        sigma += var.sqrt();
    }
    (sigma / d as f64) * n.powf(-1.0 / (d as f64 + 4.0))
}

impl DensityReward {
    pub fn mode(&self) -> DensityMode {
        self.mode
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Bandwidth of a kernel estimate, `None` for histograms.
    pub fn bandwidth(&self) -> Option<f64> {
        match &self.fitted {
            Fitted::Kde { h, .. } => Some(*h),
            Fitted::Histogram { .. } => None,
        }
    }

    /// Unclipped log-density of an observation (and action in state-action mode).
    pub fn log_density(&self, obs: &[f64], action: usize) -> Result<f64> {
        let n = self.n as f64;
        match &self.fitted {
            Fitted::Histogram {
                alpha,
                state_count,
                action_count,
                counts,
            } => {
                let s = decode_one_hot(obs, *state_count)?;
                let cell = match self.mode {
                    DensityMode::State => s,
                    DensityMode::StateAction => {
                        if action >= *action_count {
                            return Err(Error::InvalidAction {
                                action,
                                action_count: *action_count,
                            });
                        }
                        s * action_count + action
                    }
                };
                Ok(((counts[cell] + alpha) / (n + alpha * counts.len() as f64)).ln())
            }
            Fitted::Kde { h, points, actions } => {
                let d = points[0].len();
                if obs.len() != d {
                    return Err(Error::Dimension {
                        what: "density observation",
                        expected: d,
                        got: obs.len(),
                    });
                }
                let inv = 1.0 / (2.0 * h * h);
                let exps: Vec<f64> = points
                    .iter()
                    .zip(actions)
                    .filter(|(_, &a)| self.mode == DensityMode::State || a == action)
                    .map(|(p, _)| -inv * p.iter().zip(obs).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
                    .collect();
                let norm = n.ln() + 0.5 * d as f64 * (2.0 * std::f64::consts::PI * h * h).ln();
                Ok(log_sum_exp(&exps) - norm)
            }
        }
    }

    /// `max(log_density, floor)`.
    pub fn evaluate(&self, obs: &[f64], action: usize) -> Result<f64> {
        Ok(self.log_density(obs, action)?.max(self.floor))
    }
}

impl RewardModel for DensityReward {
    fn reward(&self, step: &StepContext<'_>) -> Result<f64> {
        self.evaluate(step.obs, step.action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    /// Defaults to state-only on tabular models, state-action otherwise.
    pub mode: Option<DensityMode>,
    pub alpha: f64,
    pub bandwidth: Bandwidth,
    pub floor: f64,
    /// Defaults to [`OptimizerConfig::default_for`] the environment.
    pub optimizer: Option<OptimizerConfig>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            mode: None,
            alpha: 1.0,
            bandwidth: Bandwidth::Fixed(0.1),
            floor: DEFAULT_FLOOR,
            optimizer: None,
        }
    }
}

impl DensityConfig {
    pub fn resolved(&self, model: &EnvModel) -> Self {
        let default_mode = if model.is_tabular() {
            DensityMode::State
        } else {
            DensityMode::StateAction
        };
        Self {
            mode: Some(self.mode.unwrap_or(default_mode)),
            optimizer: Some(self.optimizer.unwrap_or_else(|| OptimizerConfig::default_for(model))),
            ..*self
        }
    }

    /// Histogram on tabular models, kernel estimate otherwise.
    pub fn estimator(&self, model: &EnvModel) -> Estimator {
        match model.as_tabular() {
            Some(m) => Estimator::Histogram {
                alpha: self.alpha,
                state_count: m.state_count(),
                action_count: m.action_count(),
            },
            None => Estimator::Kde {
                bandwidth: self.bandwidth,
            },
        }
    }
}

/// Fits the density once, then optimizes a policy against it. One unit of
/// `train` budget is one optimizer update.
pub struct DensityIrl {
    reward: Arc<DensityReward>,
    optimizer: Box<dyn PolicyOptimizer>,
    env: EnvInstance,
    metrics: Vec<serde_json::Value>,
}

impl DensityIrl {
    pub fn new(env: EnvInstance, demos: &[Trajectory], config: DensityConfig, seeds: &SeedStream) -> Result<Self> {
        let config = config.resolved(env.model());
        let reward = density_fit(
            demos,
            config.mode.expect("resolved"),
            config.estimator(env.model()),
            config.floor,
        )?;
        let optimizer = config.optimizer.expect("resolved").build(env.model(), seeds)?;
        Ok(Self::with_optimizer(env, reward, optimizer))
    }

    pub fn with_optimizer(env: EnvInstance, reward: DensityReward, optimizer: Box<dyn PolicyOptimizer>) -> Self {
        Self {
            reward: Arc::new(reward),
            optimizer,
            env,
            metrics: Vec::new(),
        }
    }

    pub fn reward(&self) -> Arc<DensityReward> {
        Arc::clone(&self.reward)
    }
}

/// Optimizes `optimizer` against `reward` for `budget` updates.
pub fn density_irl_train(
    env: &mut EnvInstance,
    reward: &DensityReward,
    optimizer: &mut dyn PolicyOptimizer,
    budget: usize,
) -> Result<()> {
    optimizer.improve(env, RewardChannel::Model(reward), budget)?;
    Ok(())
}

impl ImitationAlgorithm for DensityIrl {
    fn name(&self) -> &'static str {
        "density"
    }

    fn train(&mut self, budget: usize) -> Result<()> {
        for _ in 0..budget {
            let report = self
                .optimizer
                .improve(&mut self.env, RewardChannel::Model(&*self.reward), 1)?;
            self.metrics.push(json!({
                "update": self.metrics.len(),
                "mean_train_return": report.mean_train_return,
                "mean_return": report.mean_env_return,
            }));
        }
        Ok(())
    }

    fn current_policy(&self) -> &dyn Policy {
        self.optimizer.policy()
    }

    fn metrics(&self) -> &[serde_json::Value] {
        &self.metrics
    }
}
