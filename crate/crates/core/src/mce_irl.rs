//! Maximum causal entropy IRL on tabular models.
//!
//! The reward is linear in state features, `r(s) = theta . phi(s)`. The
//! objective `L(theta) = theta . f_E - sum_s D0(s) V_0(s; theta)` has gradient
//! `f_E - f_theta`, where `f_theta` are the feature expectations of the soft
//! optimal policy for `theta`. We ascend it with a fixed step size.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::algorithm::ImitationAlgorithm;
use crate::data::{Trajectory, FORMAT_VERSION};
use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::policy::{decode_one_hot, Policy, TabularPolicy};
use crate::policy_opt::{occupancy, soft_value_iteration, RewardModel, StepContext};

/// `r(s) = weights . phi(s)`, broadcast over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReward {
    pub weights: Vec<f64>,
    features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearRewardRecord {
    pub v: u64,
    pub weights: Vec<f64>,
}

impl LinearReward {
    pub fn new(mdp: &TabularMdp, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != mdp.feature_dim() {
            return Err(Error::Dimension {
                what: "reward weights",
                expected: mdp.feature_dim(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("reward weights"));
        }
        let features = (0..mdp.state_count()).map(|s| mdp.features(s).to_vec()).collect();
        Ok(Self { weights, features })
    }

    pub fn zeros(mdp: &TabularMdp) -> Self {
        Self::new(mdp, vec![0.0; mdp.feature_dim()]).expect("zero weights are valid")
    }

    pub fn state_reward(&self, s: usize) -> f64 {
        dot(&self.weights, &self.features[s])
    }

    /// The `S x A` table consumed by the solvers.
    pub fn table(&self, action_count: usize) -> Vec<Vec<f64>> {
        (0..self.features.len())
            .map(|s| vec![self.state_reward(s); action_count])
            .collect()
    }

    pub fn to_record(&self) -> LinearRewardRecord {
        LinearRewardRecord {
            v: FORMAT_VERSION,
            weights: self.weights.clone(),
        }
    }

    pub fn from_record(mdp: &TabularMdp, record: LinearRewardRecord) -> Result<Self> {
        if record.v != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "linear reward record version {} (expected {FORMAT_VERSION})",
                record.v
            )));
        }
        Self::new(mdp, record.weights)
    }
}

impl RewardModel for LinearReward {
    fn reward(&self, step: &StepContext<'_>) -> Result<f64> {
        Ok(self.state_reward(decode_one_hot(step.obs, self.features.len())?))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Empirical mean of `sum_t phi(s_t)` over the first `T` states of each demo.
pub fn expert_feature_expectations(demos: &[Trajectory], mdp: &TabularMdp) -> Result<Vec<f64>> {
    if demos.is_empty() {
        return Err(Error::Empty("expert demonstrations"));
    }
    let mut f = vec![0.0; mdp.feature_dim()];
    for (i, traj) in demos.iter().enumerate() {
        traj.validate(Some(mdp.action_count()))
            .map_err(|reason| Error::MalformedTrajectory { index: i, reason })?;
        for obs in &traj.observations[..traj.len()] {
            let s = decode_one_hot(obs, mdp.state_count())?;
            for (acc, phi) in f.iter_mut().zip(mdp.features(s)) {
                *acc += phi;
            }
        }
    }
    let n = demos.len() as f64;
    f.iter_mut().for_each(|x| *x /= n);
    Ok(f)
}

/// Feature expectations of the soft-optimal policy for `reward`, and that policy.
pub fn learner_feature_expectations(
    mdp: &TabularMdp,
    reward: &LinearReward,
) -> Result<(Vec<f64>, TabularPolicy, f64)> {
    let sol = soft_value_iteration(mdp, &reward.table(mdp.action_count()))?;
    let occ = occupancy(mdp, &sol.policy)?;
    let log_z = dot(mdp.initial_distribution(), &sol.values[0]);
    Ok((occ.feature_expectations(mdp), sol.policy, log_z))
}

/// `theta . f_E - sum_s D0(s) V_0(s)`; concave in `theta`.
pub fn mce_objective(mdp: &TabularMdp, expert_features: &[f64], weights: &[f64]) -> Result<f64> {
    let reward = LinearReward::new(mdp, weights.to_vec())?;
    let (_, _, log_z) = learner_feature_expectations(mdp, &reward)?;
    Ok(dot(weights, expert_features) - log_z)
}

/// `f_E - f_theta`.
pub fn mce_gradient(mdp: &TabularMdp, expert_features: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let reward = LinearReward::new(mdp, weights.to_vec())?;
    let (f, _, _) = learner_feature_expectations(mdp, &reward)?;
    Ok(expert_features.iter().zip(&f).map(|(e, l)| e - l).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MceIrlConfig {
    pub lr: f64,
    /// Iterations run by a single fit.
    pub max_iters: usize,
    /// Stop once the L-infinity feature gap falls to this value.
    pub tol: f64,
}

impl Default for MceIrlConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            max_iters: 5000,
            tol: 1e-3,
        }
    }
}

/// Where the expert's feature expectations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertStatistics {
    Demos(Vec<Trajectory>),
    /// Exact expectations, bypassing sampling noise.
    Exact(Vec<f64>),
}

/// Gradient-ascent fitter. One unit of `train` budget is one iteration.
#[derive(Debug, Clone)]
pub struct MceIrl {
    mdp: TabularMdp,
    config: MceIrlConfig,
    expert_features: Vec<f64>,
    reward: LinearReward,
    best_reward: LinearReward,
    best_policy: TabularPolicy,
    best_gap: f64,
    initial_gap: Option<f64>,
    gaps: Vec<f64>,
    converged: bool,
    metrics: Vec<serde_json::Value>,
}

impl MceIrl {
    pub fn new(mdp: &TabularMdp, expert: ExpertStatistics, config: MceIrlConfig) -> Result<Self> {
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", config.lr)));
        }
        let expert_features = match expert {
            ExpertStatistics::Demos(demos) => expert_feature_expectations(&demos, mdp)?,
            ExpertStatistics::Exact(f) => {
                if f.len() != mdp.feature_dim() {
                    return Err(Error::Dimension {
                        what: "expert feature expectations",
                        expected: mdp.feature_dim(),
                        got: f.len(),
                    });
                }
                f
            }
        };
        let reward = LinearReward::zeros(mdp);
        let policy = TabularPolicy::uniform(mdp.horizon(), mdp.state_count(), mdp.action_count());
        Ok(Self {
            mdp: mdp.clone(),
            config,
            expert_features,
            best_reward: reward.clone(),
            reward,
            best_policy: policy,
            best_gap: f64::INFINITY,
            initial_gap: None,
            gaps: Vec::new(),
            converged: false,
            metrics: Vec::new(),
        })
    }

    pub fn expert_features(&self) -> &[f64] {
        &self.expert_features
    }

    /// L-infinity feature gap of every evaluated iterate.
    pub fn gap_history(&self) -> &[f64] {
        &self.gaps
    }

    pub fn best_gap(&self) -> f64 {
        self.best_gap
    }

    pub fn best_reward(&self) -> &LinearReward {
        &self.best_reward
    }

    pub fn best_policy(&self) -> &TabularPolicy {
        &self.best_policy
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Evaluates the current iterate, then takes one gradient step unless the
    /// gap is already within tolerance. Returns the evaluated gap.
    pub fn iterate(&mut self) -> Result<f64> {
        let (f, policy, _) = learner_feature_expectations(&self.mdp, &self.reward)?;
        let gap = linf(&self.expert_features, &f);
        let iter = self.gaps.len();
        self.gaps.push(gap);
        self.metrics.push(json!({"iter": iter, "gap": gap}));
        let initial = *self.initial_gap.get_or_insert(gap);
        if initial > 0.0 && gap > 10.0 * initial {
            return Err(Error::Diverged { iter, gap, initial });
        }
        if gap < self.best_gap {
            self.best_gap = gap;
            self.best_reward = self.reward.clone();
            self.best_policy = policy;
        }
        if gap <= self.config.tol {
            self.converged = true;
            return Ok(gap);
        }
        let lr = self.config.lr;
        for ((w, e), l) in self.reward.weights.iter_mut().zip(&self.expert_features).zip(&f) {
            *w += lr * (e - l);
        }
        if self.reward.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("reward weights"));
        }
        Ok(gap)
    }

    pub fn fit(&mut self) -> Result<MceIrlFit> {
        self.train(self.config.max_iters)?;
        Ok(self.result())
    }

    pub fn result(&self) -> MceIrlFit {
        MceIrlFit {
            reward: self.best_reward.clone(),
            policy: self.best_policy.clone(),
            gap_history: self.gaps.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MceIrlFit {
    pub reward: LinearReward,
    pub policy: TabularPolicy,
    pub gap_history: Vec<f64>,
}

/// Fits from demonstrations with `config.max_iters` iterations.
pub fn mce_irl_fit(mdp: &TabularMdp, demos: &[Trajectory], config: MceIrlConfig) -> Result<MceIrlFit> {
    MceIrl::new(mdp, ExpertStatistics::Demos(demos.to_vec()), config)?.fit()
}

impl ImitationAlgorithm for MceIrl {
    fn name(&self) -> &'static str {
        "mce_irl"
    }

    fn train(&mut self, budget: usize) -> Result<()> {
        for _ in 0..budget {
            if self.converged {
                break;
            }
            self.iterate()?;
        }
        Ok(())
    }

    fn current_policy(&self) -> &dyn Policy {
        &self.best_policy
    }

    fn metrics(&self) -> &[serde_json::Value] {
        &self.metrics
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{gridworld, rollout, EnvInstance, EnvModel};
    use crate::policy::one_hot;
    use crate::seeds::SeedStream;
    use rand::Rng;
    use std::sync::Arc;

    fn random_mdp(seed: u64, s_n: usize, a_n: usize, h: usize) -> TabularMdp {
        let mut rng = SeedStream::new(seed).rng();
        let mut row = |n: usize| {
            let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect::<Vec<_>>()
        };
        let transitions = (0..s_n).map(|_| (0..a_n).map(|_| row(s_n)).collect()).collect();
        let initial = row(s_n);
        TabularMdp::new(transitions, vec![vec![0.0; a_n]; s_n], initial, h, None).unwrap()
    }

    /// Each action mostly moves to one chosen state, so rewards steer visits.
    fn controllable_mdp(seed: u64, s_n: usize, a_n: usize, h: usize) -> TabularMdp {
        let mut rng = SeedStream::new(seed).rng();
        let transitions = (0..s_n)
            .map(|_| {
                (0..a_n)
                    .map(|_| {
                        let mut row = vec![0.1 / s_n as f64; s_n];
                        row[rng.gen_range(0..s_n)] += 0.9;
                        row
                    })
                    .collect()
            })
            .collect();
        let initial = vec![1.0 / s_n as f64; s_n];
        TabularMdp::new(transitions, vec![vec![0.0; a_n]; s_n], initial, h, None).unwrap()
    }

    #[test]
    fn one_hot_demo_counts() {
        let mdp = random_mdp(0, 3, 2, 4);
        let demo = Trajectory {
            observations: vec![one_hot(0, 3); 5],
            actions: vec![0; 4],
            rewards: None,
            terminal: true,
        };
        assert_eq!(expert_feature_expectations(&[demo], &mdp).unwrap(), vec![4.0, 0.0, 0.0]);
        assert!(expert_feature_expectations(&[], &mdp).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let mdp = random_mdp(seed, 4, 3, 5);
            let mut rng = SeedStream::new(100 + seed).rng();
            let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target = learner_feature_expectations(
                &mdp,
                &LinearReward::new(&mdp, (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            )
            .unwrap()
            .0;
            let grad = mce_gradient(&mdp, &target, &theta).unwrap();
            let h = 1e-5;
            for i in 0..4 {
                let mut plus = theta.clone();
                plus[i] += h;
                let mut minus = theta.clone();
                minus[i] -= h;
                let fd = (mce_objective(&mdp, &target, &plus).unwrap()
                    - mce_objective(&mdp, &target, &minus).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-5, "seed {seed} coord {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn exact_occupancy_is_matched_on_small_mdps() {
        for seed in 0..3 {
            let mdp = controllable_mdp(seed + 10, 4, 3, 6);
            let truth = LinearReward::new(&mdp, vec![1.0, -0.5, 0.3, 0.0]).unwrap();
            let target = learner_feature_expectations(&mdp, &truth).unwrap().0;
            let mut irl = MceIrl::new(
                &mdp,
                ExpertStatistics::Exact(target),
                MceIrlConfig {
                    lr: 0.05,
                    max_iters: 2000,
                    tol: 1e-4,
                },
            )
            .unwrap();
            irl.fit().unwrap();
            assert!(irl.best_gap() <= 1e-4, "seed {seed}: gap {}", irl.best_gap());
        }
    }

    #[test]
    fn starting_at_truth_has_no_gradient() {
        let mdp = random_mdp(5, 4, 2, 6);
        let theta = vec![0.4, -0.2, 0.9, 0.1];
        let truth = LinearReward::new(&mdp, theta.clone()).unwrap();
        let target = learner_feature_expectations(&mdp, &truth).unwrap().0;
        let grad = mce_gradient(&mdp, &target, &theta).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn single_state_gap_is_zero() {
        let mdp = TabularMdp::new(vec![vec![vec![1.0], vec![1.0]]], vec![vec![0.0, 0.0]], vec![1.0], 3, None).unwrap();
        let demo = Trajectory {
            observations: vec![vec![1.0]; 4],
            actions: vec![0, 1, 0],
            rewards: None,
            terminal: true,
        };
        let fit = mce_irl_fit(&mdp, &[demo], MceIrlConfig::default()).unwrap();
        assert!(fit.gap_history.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn oversized_step_reports_divergence() {
        let mdp = random_mdp(7, 4, 2, 6);
        let truth = LinearReward::new(&mdp, vec![3.0, -3.0, 0.0, 1.0]).unwrap();
        let target = learner_feature_expectations(&mdp, &truth).unwrap().0;
        let mut irl = MceIrl::new(
            &mdp,
            ExpertStatistics::Exact(target),
            MceIrlConfig {
                lr: 500.0,
                max_iters: 200,
                tol: 1e-9,
            },
        )
        .unwrap();
        let err = irl.fit();
        assert!(matches!(err, Err(Error::Diverged { .. })) || irl.best_gap() > 1e-9);
    }

    #[test]
    fn sampled_soft_demos_are_matched() {
        let mdp = gridworld(5, 0.1, 20).unwrap();
        let mut w = vec![0.0; 25];
        w[24] = 2.0;
        w[12] = 1.0;
        let truth = LinearReward::new(&mdp, w).unwrap();
        let policy = soft_value_iteration(&mdp, &truth.table(4)).unwrap().policy;
        let seeds = SeedStream::new(8);
        let mut env = EnvInstance::new(Arc::new(EnvModel::Tabular(mdp.clone())), &seeds);
        let demos = rollout(&policy, &mut env, 500, &mut seeds.derive("demos").rng()).unwrap();
        let fit = mce_irl_fit(
            &mdp,
            &demos,
            MceIrlConfig {
                lr: 0.05,
                max_iters: 3000,
                tol: 1e-3,
            },
        )
        .unwrap();
        let best = fit.gap_history.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(best <= 1e-2, "gap {best}");
    }

    #[test]
    fn demo_counts_agree_with_occupancy() {
        let mdp = gridworld(5, 0.1, 20).unwrap();
        let policy = TabularPolicy::uniform(20, 25, 4);
        let exact = occupancy(&mdp, &policy).unwrap().feature_expectations(&mdp);
        let seeds = SeedStream::new(12);
        let mut env = EnvInstance::new(Arc::new(EnvModel::Tabular(mdp.clone())), &seeds);
        let demos = rollout(&policy, &mut env, 2000, &mut seeds.derive("demos").rng()).unwrap();
        let f = expert_feature_expectations(&demos, &mdp).unwrap();
        for s in 0..25 {
            let counts: Vec<f64> = demos
                .iter()
                .map(|d| d.observations[..20].iter().filter(|o| o[s] == 1.0).count() as f64)
                .collect();
            let var = counts.iter().map(|c| (c - f[s]).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
            let se = (var / counts.len() as f64).sqrt();
            // A 3-sigma family-wise level over 25 states is about 3.9 per state.
            assert!((f[s] - exact[s]).abs() <= 3.9 * se + 1e-12, "state {s}: {} vs {}", f[s], exact[s]);
        }
    }

    #[test]
    fn record_round_trip() {
        let mdp = random_mdp(1, 3, 2, 2);
        let r = LinearReward::new(&mdp, vec![0.1, 0.2, -0.3]).unwrap();
        let json = serde_json::to_string(&r.to_record()).unwrap();
        let back = LinearReward::from_record(&mdp, serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
