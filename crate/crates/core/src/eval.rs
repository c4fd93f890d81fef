//! Evaluation statistics: Student-t confidence intervals over per-seed means
//! and expert/random normalized returns.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::envs::{rollout, EnvInstance, EnvModel, ExpertPolicy};
use crate::error::{Error, Result};
use crate::policy::{Policy, UniformPolicy};
use crate::seeds::SeedStream;

/// Episodes rolled out per seed when evaluating a policy.
pub const EVAL_EPISODES: usize = 50;

/// Root seed of the reference runs used for normalization outside a benchmark.
pub const BASELINE_SEED: u64 = 1000;

/// Upper quantiles of Student's t for 1..=30 degrees of freedom.
const T_95: [f64; 30] = [
    6.313752, 2.919986, 2.353363, 2.131847, 2.015048, 1.943180, 1.894579, 1.859548, 1.833113,
    1.812461, 1.795885, 1.782288, 1.770933, 1.761310, 1.753050, 1.745884, 1.739607, 1.734064,
    1.729133, 1.724718, 1.720743, 1.717144, 1.713872, 1.710882, 1.708141, 1.705618, 1.703288,
    1.701131, 1.699127, 1.697261,
];
const T_975: [f64; 30] = [
    12.706205, 4.302653, 3.182446, 2.776445, 2.570582, 2.446912, 2.364624, 2.306004, 2.262157,
    2.228139, 2.200985, 2.178813, 2.160369, 2.144787, 2.131450, 2.119905, 2.109816, 2.100922,
    2.093024, 2.085963, 2.079614, 2.073873, 2.068658, 2.063899, 2.059539, 2.055529, 2.051831,
    2.048407, 2.045230, 2.042272,
];
const T_995: [f64; 30] = [
    63.656741, 9.924843, 5.840909, 4.604095, 4.032143, 3.707428, 3.499483, 3.355387, 3.249836,
    3.169273, 3.105807, 3.054540, 3.012276, 2.976843, 2.946713, 2.920782, 2.898231, 2.878440,
    2.860935, 2.845340, 2.831360, 2.818756, 2.807336, 2.796940, 2.787436, 2.778715, 2.770683,
    2.763262, 2.756386, 2.749996,
];

/// Two-sided critical value `t_{df, (1 + level) / 2}` for `level` in
/// {0.90, 0.95, 0.99}. Beyond 30 degrees of freedom a Cornish-Fisher
/// expansion around the normal quantile is used.
pub fn t_critical(df: usize, level: f64) -> Result<f64> {
    let (table, z) = if (level - 0.90).abs() < 1e-12 {
        (&T_95, 1.6448536269514722)
    } else if (level - 0.95).abs() < 1e-12 {
        (&T_975, 1.959963984540054)
    } else if (level - 0.99).abs() < 1e-12 {
        (&T_995, 2.5758293035489004)
    } else {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} not tabulated; use 0.90, 0.95 or 0.99"
        )));
    };
    match df {
        0 => Err(Error::InvalidArgument("t quantile needs at least one degree of freedom".into())),
        1..=30 => Ok(table[df - 1]),
        _ => Ok(cornish_fisher(z, df as f64)),
    }
}

fn cornish_fisher(z: f64, nu: f64) -> f64 {
    let z2 = z * z;
    let g1 = (z2 + 1.0) * z / 4.0;
    let g2 = ((5.0 * z2 + 16.0) * z2 + 3.0) * z / 96.0;
    let g3 = (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) * z / 384.0;
    let g4 = ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) * z / 92160.0;
    z + g1 / nu + g2 / nu.powi(2) + g3 / nu.powi(3) + g4 / nu.powi(4)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Sample mean and the half-width `t_{n-1} s / sqrt(n)` of its confidence
/// interval, with `s` the sample standard deviation.
pub fn t_confidence_interval(per_seed_means: &[f64], level: f64) -> Result<(f64, f64)> {
    let n = per_seed_means.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a confidence interval needs at least 2 values, got {n}"
        )));
    }
    if per_seed_means.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("per-seed mean"));
    }
    let values = sorted(per_seed_means);
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    Ok((mean, t_critical(n - 1, level)? * se))
}

/// `(mean - random) / (expert - random)`: 0 for a random policy, 1 for the expert.
pub fn normalized_return(mean: f64, random_mean: f64, expert_mean: f64) -> Result<f64> {
    let denom = expert_mean - random_mean;
    if denom == 0.0 {
        return Err(Error::InvalidArgument(
            "expert and random means coincide; normalization undefined".into(),
        ));
    }
    Ok((mean - random_mean) / denom)
}

/// Mean returns of the reference policies of one environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub random_mean: f64,
    pub expert_mean: f64,
}

impl Baselines {
    pub fn normalize(&self, mean: f64) -> Result<f64> {
        normalized_return(mean, self.random_mean, self.expert_mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    /// Standard error of the mean.
    pub std_error: f64,
    pub n: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub normalized: Option<f64>,
}

impl EvalStats {
    /// 95% interval over per-seed means, normalized against `baselines` if given.
    pub fn from_seed_means(per_seed_means: &[f64], baselines: Option<&Baselines>) -> Result<Self> {
        let (mean, half) = t_confidence_interval(per_seed_means, 0.95)?;
        let n = per_seed_means.len();
        let std_error = half / t_critical(n - 1, 0.95)?;
        let normalized = baselines.map(|b| b.normalize(mean)).transpose()?;
        Ok(Self {
            mean,
            std_error,
            n,
            ci_low: mean - half,
            ci_high: mean + half,
            normalized,
        })
    }

    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

/// Ground-truth returns of `episodes` rollouts of `policy`. Dynamics and
/// action sampling draw from substreams of `seeds`.
pub fn episode_returns(
    policy: &dyn Policy,
    model: Arc<EnvModel>,
    episodes: usize,
    seeds: &SeedStream,
) -> Result<Vec<f64>> {
    let seeds = seeds.derive("eval");
    let mut env = EnvInstance::new(model, &seeds);
    let mut rng = seeds.derive("actions").rng();
    let trajs = rollout(policy, &mut env, episodes, &mut rng)?;
    Ok(trajs
        .iter()
        .map(|t| t.total_reward().expect("rollouts carry rewards"))
        .collect())
}

/// Mean ground-truth return over `episodes` rollouts.
pub fn evaluate_policy(
    policy: &dyn Policy,
    model: Arc<EnvModel>,
    episodes: usize,
    seeds: &SeedStream,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let returns = episode_returns(policy, model, episodes, seeds)?;
    Ok(sorted(&returns).iter().sum::<f64>() / episodes as f64)
}

/// Random and expert means, each averaged over `n_seeds` seeds of
/// `episodes` rollouts.
pub fn compute_baselines(
    model: Arc<EnvModel>,
    episodes: usize,
    n_seeds: usize,
    seeds: &SeedStream,
) -> Result<Baselines> {
    let random = UniformPolicy {
        actions: model.action_count(),
    };
    let expert = ExpertPolicy::for_model(&model);
    let mut r = 0.0;
    let mut e = 0.0;
    for i in 0..n_seeds.max(1) {
        let s = seeds.derive_indexed("baseline", i);
        r += evaluate_policy(&random, Arc::clone(&model), episodes, &s)?;
        e += evaluate_policy(&expert, Arc::clone(&model), episodes, &s)?;
    }
    let k = n_seeds.max(1) as f64;
    Ok(Baselines {
        random_mean: r / k,
        expert_mean: e / k,
    })
}
