//! Exact finite-horizon solvers over tabular models.

use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::nn::log_sum_exp;
use crate::policy::{Policy, TabularPolicy};

/// Output of [`soft_value_iteration`]. `values` has `horizon + 1` rows, the
/// last one zero; `q[t][s][a]` are the soft action values.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSolution {
    pub q: Vec<Vec<Vec<f64>>>,
    pub values: Vec<Vec<f64>>,
    pub policy: TabularPolicy,
}

fn check_reward(mdp: &TabularMdp, reward: &[Vec<f64>]) -> Result<()> {
    if reward.len() != mdp.state_count() {
        return Err(Error::Dimension {
            what: "reward table states",
            expected: mdp.state_count(),
            got: reward.len(),
        });
    }
    if let Some(row) = reward.iter().find(|r| r.len() != mdp.action_count()) {
        return Err(Error::Dimension {
            what: "reward table actions",
            expected: mdp.action_count(),
            got: row.len(),
        });
    }
    if reward.iter().flatten().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("reward table"));
    }
    Ok(())
}

/// Maximum-causal-entropy backup:
/// `Q_t(s,a) = r(s,a) + E[V_{t+1}(s')]`, `V_t(s) = logsumexp_a Q_t(s,a)`,
/// `pi_t(a|s) = exp(Q_t(s,a) - V_t(s))`, with `V_H = 0`.
pub fn soft_value_iteration(mdp: &TabularMdp, reward: &[Vec<f64>]) -> Result<SoftSolution> {
    check_reward(mdp, reward)?;
    let (s_n, a_n, h) = (mdp.state_count(), mdp.action_count(), mdp.horizon());
    let mut values = vec![vec![0.0; s_n]; h + 1];
    let mut q = vec![vec![vec![0.0; a_n]; s_n]; h];
    let mut probs = vec![vec![vec![0.0; a_n]; s_n]; h];
    for t in (0..h).rev() {
        for s in 0..s_n {
            for a in 0..a_n {
                let cont: f64 = mdp
                    .next_state_dist(s, a)
                    .iter()
                    .zip(&values[t + 1])
                    .map(|(p, v)| p * v)
                    .sum();
                q[t][s][a] = reward[s][a] + cont;
            }
            let v = log_sum_exp(&q[t][s]);
            values[t][s] = v;
            for a in 0..a_n {
                probs[t][s][a] = (q[t][s][a] - v).exp();
            }
        }
    }
    Ok(SoftSolution {
        q,
        values,
        policy: TabularPolicy { probs },
    })
}

/// Greedy finite-horizon solution for an arbitrary reward table; ties go to
/// the lowest action index.
pub fn greedy_value_iteration(
    mdp: &TabularMdp,
    reward: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, TabularPolicy)> {
    check_reward(mdp, reward)?;
    let (s_n, a_n, h) = (mdp.state_count(), mdp.action_count(), mdp.horizon());
    let mut values = vec![vec![0.0; s_n]; h + 1];
    let mut probs = vec![vec![vec![0.0; a_n]; s_n]; h];
    for t in (0..h).rev() {
        for s in 0..s_n {
            let mut best = (0, f64::NEG_INFINITY);
            for a in 0..a_n {
                let q = reward[s][a]
                    + mdp
                        .next_state_dist(s, a)
                        .iter()
                        .zip(&values[t + 1])
                        .map(|(p, v)| p * v)
                        .sum::<f64>();
                if q > best.1 {
                    best = (a, q);
                }
            }
            values[t][s] = best.1;
            probs[t][s][best.0] = 1.0;
        }
    }
    Ok((values, TabularPolicy { probs }))
}

/// Per-step state distribution `d[t][s]` induced by a policy from the initial
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub d: Vec<Vec<f64>>,
}

impl OccupancyMeasure {
    pub fn horizon(&self) -> usize {
        self.d.len()
    }

    /// Expected number of visits to each state over the horizon.
    pub fn state_visits(&self) -> Vec<f64> {
        let s_n = self.d.first().map_or(0, Vec::len);
        let mut visits = vec![0.0; s_n];
        for row in &self.d {
            for (v, p) in visits.iter_mut().zip(row) {
                *v += p;
            }
        }
        visits
    }

    /// Expected feature counts `sum_t sum_s d[t][s] phi(s)`.
    pub fn feature_expectations(&self, mdp: &TabularMdp) -> Vec<f64> {
        let mut f = vec![0.0; mdp.feature_dim()];
        for (s, visits) in self.state_visits().iter().enumerate() {
            for (acc, phi) in f.iter_mut().zip(mdp.features(s)) {
                *acc += visits * phi;
            }
        }
        f
    }
}

pub fn occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    let (s_n, a_n, h) = (mdp.state_count(), mdp.action_count(), mdp.horizon());
    if policy.state_count() != s_n || policy.action_count() != a_n {
        return Err(Error::Dimension {
            what: "policy table",
            expected: s_n,
            got: policy.state_count(),
        });
    }
    let mut d = Vec::with_capacity(h);
    d.push(mdp.initial_distribution().to_vec());
    for t in 0..h.saturating_sub(1) {
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            let mass = d[t][s];
            if mass == 0.0 {
                continue;
            }
            for a in 0..a_n {
                let w = mass * policy.prob(t, s, a);
                if w == 0.0 {
                    continue;
                }
                for (n, p) in next.iter_mut().zip(mdp.next_state_dist(s, a)) {
                    *n += w * p;
                }
            }
        }
        d.push(next);
    }
    Ok(OccupancyMeasure { d })
}

/// Exact expected return of `policy` under a reward table.
pub fn expected_return(mdp: &TabularMdp, policy: &TabularPolicy, reward: &[Vec<f64>]) -> Result<f64> {
    check_reward(mdp, reward)?;
    let occ = occupancy(mdp, policy)?;
    let mut total = 0.0;
    for (t, row) in occ.d.iter().enumerate() {
        for (s, mass) in row.iter().enumerate() {
            total += mass
                * policy
                    .row(t, s)
                    .iter()
                    .zip(&reward[s])
                    .map(|(p, r)| p * r)
                    .sum::<f64>();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{gridworld, value_iteration, EnvInstance, EnvModel};
    use crate::envs::rollout;
    use crate::policy::decode_one_hot;
    use crate::seeds::SeedStream;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    fn random_mdp(seed: u64, states: usize, actions: usize, horizon: usize) -> TabularMdp {
        let mut rng = SeedStream::new(seed).rng();
        let mut simplex = |n: usize| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let mut v: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let fix: f64 = v[..n - 1].iter().sum();
            v[n - 1] = 1.0 - fix;
            v
        };
        let transitions = (0..states)
            .map(|_| (0..actions).map(|_| simplex(states)).collect())
            .collect();
        let initial = simplex(states);
        let mut rng = SeedStream::new(seed + 1000).rng();
        let reward = (0..states)
            .map(|_| (0..actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        TabularMdp::new(transitions, reward, initial, horizon, None).unwrap()
    }

    #[test]
    fn single_state_soft_value() {
        let mdp = TabularMdp::new(vec![vec![vec![1.0]]], vec![vec![1.0]], vec![1.0], 3, None).unwrap();
        let sol = soft_value_iteration(&mdp, &mdp.reward_table()).unwrap();
        assert!((sol.values[0][0] - 3.0).abs() < 1e-15);
        assert_eq!(sol.policy.probs[0][0], vec![1.0]);
    }

    #[test]
    fn two_action_zero_reward() {
        let mdp = TabularMdp::new(
            vec![vec![vec![1.0], vec![1.0]]],
            vec![vec![0.0, 0.0]],
            vec![1.0],
            1,
            None,
        )
        .unwrap();
        let sol = soft_value_iteration(&mdp, &mdp.reward_table()).unwrap();
        assert!((sol.values[0][0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sol.policy.probs[0][0], vec![0.5, 0.5]);
    }

    #[test]
    fn soft_dominates_hard_on_random_mdps() {
        for seed in 0..20 {
            let mdp = random_mdp(seed, 4, 3, 5);
            let soft = soft_value_iteration(&mdp, &mdp.reward_table()).unwrap();
            let (hard, _) = value_iteration(&mdp);
            for s in 0..4 {
                assert!(soft.values[0][s] >= hard[0][s]);
            }
        }
    }

    #[test]
    fn soft_solution_is_self_consistent() {
        for seed in 0..10 {
            let mdp = random_mdp(seed, 5, 3, 6);
            let reward = mdp.reward_table();
            let sol = soft_value_iteration(&mdp, &reward).unwrap();
            sol.policy.validate(1e-12).unwrap();
            for t in 0..6 {
                for s in 0..5 {
                    for a in 0..3 {
                        let q: f64 = reward[s][a]
                            + mdp
                                .next_state_dist(s, a)
                                .iter()
                                .zip(&sol.values[t + 1])
                                .map(|(p, v)| p * v)
                                .sum::<f64>();
                        let pi = (q - sol.values[t][s]).exp();
                        assert!((pi - sol.policy.probs[t][s][a]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn self_loop_occupancy() {
        let mdp = TabularMdp::new(
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![0.0], vec![0.0]],
            vec![1.0, 0.0],
            4,
            None,
        )
        .unwrap();
        let pol = TabularPolicy::uniform(4, 2, 1);
        let occ = occupancy(&mdp, &pol).unwrap();
        assert!(occ.d.iter().all(|row| row == &vec![1.0, 0.0]));
        assert_eq!(occ.state_visits(), vec![4.0, 0.0]);
    }

    #[test]
    fn swap_chain_occupancy() {
        // Action 0 swaps states, action 1 stays. Uniform policy from s0:
        // d_0 = (1, 0), then every later step is (1/2, 1/2).
        let mdp = TabularMdp::new(
            vec![
                vec![vec![0.0, 1.0], vec![1.0, 0.0]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![1.0, 0.0],
            4,
            None,
        )
        .unwrap();
        let occ = occupancy(&mdp, &TabularPolicy::uniform(4, 2, 2)).unwrap();
        assert_eq!(occ.d[0], vec![1.0, 0.0]);
        for t in 1..4 {
            assert_eq!(occ.d[t], vec![0.5, 0.5]);
        }
        // Deterministic swapping alternates.
        let swap = TabularPolicy {
            probs: vec![vec![vec![1.0, 0.0]; 2]; 4],
        };
        let occ = occupancy(&mdp, &swap).unwrap();
        assert_eq!(occ.d[1], vec![0.0, 1.0]);
        assert_eq!(occ.d[2], vec![1.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn occupancy_conserves_mass(seed in 0u64..10_000, states in 1usize..7, actions in 1usize..4, horizon in 1usize..12) {
            let mdp = random_mdp(seed, states, actions, horizon);
            let rewards: Vec<Vec<f64>> = mdp.reward_table().iter().map(|r| r.iter().map(|x| 3.0 * x).collect()).collect();
            let pol = soft_value_iteration(&mdp, &rewards).unwrap().policy;
            let occ = occupancy(&mdp, &pol).unwrap();
            for row in &occ.d {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let total: f64 = occ.state_visits().iter().sum();
            prop_assert!((total - horizon as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn occupancy_matches_monte_carlo() {
        let mdp = gridworld(3, 0.3, 6).unwrap();
        let mut rng = SeedStream::new(1).rng();
        let reward: Vec<Vec<f64>> = (0..9).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let pol = soft_value_iteration(&mdp, &reward).unwrap().policy;
        let occ = occupancy(&mdp, &pol).unwrap();
        let mut env = EnvInstance::new(Arc::new(EnvModel::Tabular(mdp.clone())), &SeedStream::new(2));
        let n = 100_000;
        let trajs = rollout(&pol, &mut env, n, &mut rng).unwrap();
        // Per-episode visit counts; compare their mean against the exact
        // expected visits with the empirical standard error.
        let visits = occ.state_visits();
        for s in 0..9 {
            let per_episode: Vec<f64> = trajs
                .iter()
                .map(|tr| {
                    tr.observations[..6]
                        .iter()
                        .filter(|o| decode_one_hot(o, 9).unwrap() == s)
                        .count() as f64
                })
                .collect();
            let mean = per_episode.iter().sum::<f64>() / n as f64;
            let var = per_episode.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let se = (var / n as f64).sqrt();
            assert!((mean - visits[s]).abs() <= 3.0 * se + 1e-12, "s={s}: {mean} vs {}", visits[s]);
        }
    }

    #[test]
    fn expected_return_matches_value_iteration() {
        let mdp = random_mdp(3, 4, 2, 7);
        let (values, pol) = value_iteration(&mdp);
        let v0: f64 = values[0].iter().zip(mdp.initial_distribution()).map(|(v, p)| v * p).sum();
        let r = expected_return(&mdp, &pol, &mdp.reward_table()).unwrap();
        assert!((r - v0).abs() < 1e-12);
    }
}
