//! Fixed-horizon environments, the name registry, oracle experts and rollouts.
//!
//! Every episode lasts exactly `horizon` steps: there is no early termination.

pub mod lineworld;
pub mod tabular;

use std::sync::Arc;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::policy::{decode_one_hot, Policy, PolicyCheckpoint, TabularPolicy};
use crate::seeds::{names, SeedStream};

pub use lineworld::{LineController, LineState, LineWorld};
pub use tabular::{cliffworld, gridworld, value_iteration, TabularMdp};

pub const GRIDWORLD: &str = "gridworld-5x5";
pub const CLIFFWORLD: &str = "cliffworld";
pub const LINEWORLD: &str = "lineworld";
pub const REGISTRY: [&str; 3] = [GRIDWORLD, CLIFFWORLD, LINEWORLD];

/// Immutable environment description, shared between instances.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvModel {
    Tabular(TabularMdp),
    Line(LineWorld),
}

impl EnvModel {
    pub fn obs_dim(&self) -> usize {
        match self {
            EnvModel::Tabular(m) => m.state_count(),
            EnvModel::Line(_) => LineWorld::OBS_DIM,
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            EnvModel::Tabular(m) => m.action_count(),
            EnvModel::Line(_) => LineWorld::ACTIONS,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvModel::Tabular(m) => m.horizon(),
            EnvModel::Line(w) => w.horizon,
        }
    }

    pub fn as_tabular(&self) -> Option<&TabularMdp> {
        match self {
            EnvModel::Tabular(m) => Some(m),
            EnvModel::Line(_) => None,
        }
    }

    pub fn is_tabular(&self) -> bool {
        self.as_tabular().is_some()
    }

    /// Ground-truth reward for taking `action` after observing `obs`.
    pub fn true_reward(&self, obs: &[f64], action: usize) -> Result<f64> {
        if action >= self.action_count() {
            return Err(Error::InvalidAction {
                action,
                action_count: self.action_count(),
            });
        }
        match self {
            EnvModel::Tabular(m) => Ok(m.reward(decode_one_hot(obs, m.state_count())?, action)),
            EnvModel::Line(w) => {
                if obs.len() != LineWorld::OBS_DIM {
                    return Err(Error::Dimension {
                        what: "lineworld observation",
                        expected: LineWorld::OBS_DIM,
                        got: obs.len(),
                    });
                }
                Ok(w.reward(&LineState {
                    position: obs[0],
                    velocity: obs[1],
                }))
            }
        }
    }
}

/// Builds the model registered under `name`.
pub fn make_model(name: &str) -> Result<EnvModel> {
    match name {
        GRIDWORLD => Ok(EnvModel::Tabular(gridworld(5, 0.1, 20)?)),
        CLIFFWORLD => Ok(EnvModel::Tabular(cliffworld(15)?)),
        LINEWORLD => Ok(EnvModel::Line(LineWorld::default())),
        _ => Err(Error::UnknownEnv {
            name: name.to_owned(),
            registry: REGISTRY.join(", "),
        }),
    }
}

pub fn make_env(name: &str, seeds: &SeedStream) -> Result<EnvInstance> {
    Ok(EnvInstance::new(Arc::new(make_model(name)?), seeds))
}

#[derive(Debug, Clone, PartialEq)]
enum EnvState {
    Tabular(usize),
    Line(LineState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A running episode of some [`EnvModel`]. Single owner; carries its own RNG.
#[derive(Debug, Clone)]
pub struct EnvInstance {
    model: Arc<EnvModel>,
    state: Option<EnvState>,
    t: usize,
    rng: ChaCha8Rng,
}

impl EnvInstance {
    pub fn new(model: Arc<EnvModel>, seeds: &SeedStream) -> Self {
        Self {
            model,
            state: None,
            t: 0,
            rng: seeds.derive(names::ENV).rng(),
        }
    }

    pub fn model(&self) -> &EnvModel {
        &self.model
    }

    pub fn shared_model(&self) -> Arc<EnvModel> {
        Arc::clone(&self.model)
    }

    pub fn horizon(&self) -> usize {
        self.model.horizon()
    }

    pub fn action_count(&self) -> usize {
        self.model.action_count()
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    fn observe(&self, state: &EnvState) -> Vec<f64> {
        match (&*self.model, state) {
            (EnvModel::Tabular(m), EnvState::Tabular(s)) => m.observation(*s),
            (EnvModel::Line(w), EnvState::Line(s)) => w.observation(s),
            _ => unreachable!("state kind always matches the model"),
        }
    }

    pub fn reset(&mut self) -> Vec<f64> {
        let state = match &*self.model {
            EnvModel::Tabular(m) => EnvState::Tabular(m.sample_initial(&mut self.rng)),
            EnvModel::Line(w) => EnvState::Line(w.initial(&mut self.rng)),
        };
        let obs = self.observe(&state);
        self.state = Some(state);
        self.t = 0;
        obs
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        let horizon = self.horizon();
        let state = match &self.state {
            Some(s) if self.t < horizon => s.clone(),
            Some(_) => return Err(Error::EpisodeOver { horizon }),
            None => return Err(Error::InvalidArgument("step called before reset".into())),
        };
        if action >= self.action_count() {
            return Err(Error::InvalidAction {
                action,
                action_count: self.action_count(),
            });
        }
        let (reward, next) = match (&*self.model, &state) {
            (EnvModel::Tabular(m), EnvState::Tabular(s)) => (
                m.reward(*s, action),
                EnvState::Tabular(m.sample_next(*s, action, &mut self.rng)),
            ),
            (EnvModel::Line(w), EnvState::Line(s)) => (
                w.reward(s),
                EnvState::Line(w.transition(s, action, &mut self.rng)?),
            ),
            _ => unreachable!("state kind always matches the model"),
        };
        let observation = self.observe(&next);
        self.state = Some(next);
        self.t += 1;
        Ok(StepResult {
            observation,
            reward,
            done: self.t == horizon,
        })
    }
}

/// Collects `n_episodes` full episodes with `policy`; actions are sampled from
/// `rng`, dynamics from the environment's own stream.
pub fn rollout(
    policy: &dyn Policy,
    env: &mut EnvInstance,
    n_episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Trajectory>> {
    if policy.action_count() != env.action_count() {
        return Err(Error::Dimension {
            what: "policy action count",
            expected: env.action_count(),
            got: policy.action_count(),
        });
    }
    (0..n_episodes)
        .map(|_| run_episode(env, rng, |obs, t, rng| policy.act(obs, t, rng)))
        .collect()
}

/// Runs one episode choosing actions with `choose(obs, t, rng)`.
pub fn run_episode<F>(env: &mut EnvInstance, rng: &mut dyn RngCore, mut choose: F) -> Result<Trajectory>
where
    F: FnMut(&[f64], usize, &mut dyn RngCore) -> Result<usize>,
{
    let horizon = env.horizon();
    let mut observations = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    observations.push(env.reset());
    for t in 0..horizon {
        let a = choose(&observations[t], t, rng)?;
        let step = env.step(a)?;
        actions.push(a);
        rewards.push(step.reward);
        observations.push(step.observation);
    }
    Ok(Trajectory {
        observations,
        actions,
        rewards: Some(rewards),
        terminal: true,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum ExpertKind {
    Tabular(TabularPolicy),
    Controller(LineController),
}

/// Oracle demonstrator: the value-iteration policy for tabular models, a
/// hand-written controller for lineworld.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPolicy {
    kind: ExpertKind,
    pub provenance: &'static str,
}

impl ExpertPolicy {
    pub fn for_model(model: &EnvModel) -> Self {
        match model {
            EnvModel::Tabular(m) => Self {
                kind: ExpertKind::Tabular(value_iteration(m).1),
                provenance: "value-iteration",
            },
            EnvModel::Line(w) => Self {
                kind: ExpertKind::Controller(LineController {
                    target: w.target,
                    band: w.step / 2.0,
                }),
                provenance: "lineworld-controller",
            },
        }
    }

    pub fn as_tabular(&self) -> Option<&TabularPolicy> {
        match &self.kind {
            ExpertKind::Tabular(p) => Some(p),
            ExpertKind::Controller(_) => None,
        }
    }

    /// The expert's action: the argmax of its deterministic policy.
    pub fn label(&self, obs: &[f64], t: usize) -> Result<usize> {
        match &self.kind {
            ExpertKind::Tabular(p) => {
                let s = decode_one_hot(obs, p.state_count())?;
                let row = p.row(t, s);
                Ok(row
                    .iter()
                    .enumerate()
                    .fold(0, |best, (a, v)| if *v > row[best] { a } else { best }))
            }
            ExpertKind::Controller(c) => {
                c.log_probs(obs, t)?;
                Ok(c.choose(obs[0]))
            }
        }
    }
}

impl Policy for ExpertPolicy {
    fn action_count(&self) -> usize {
        match &self.kind {
            ExpertKind::Tabular(p) => p.action_count(),
            ExpertKind::Controller(c) => c.action_count(),
        }
    }

    fn log_probs(&self, obs: &[f64], t: usize) -> Result<Vec<f64>> {
        match &self.kind {
            ExpertKind::Tabular(p) => p.log_probs(obs, t),
            ExpertKind::Controller(c) => c.log_probs(obs, t),
        }
    }

    fn act(&self, obs: &[f64], t: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        self.label(obs, t)
    }

    fn checkpoint(&self) -> PolicyCheckpoint {
        match &self.kind {
            ExpertKind::Tabular(p) => p.checkpoint(),
            ExpertKind::Controller(c) => c.checkpoint(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::UniformPolicy;

    fn mean_return(trajs: &[Trajectory]) -> f64 {
        trajs.iter().map(|t| t.total_reward().unwrap()).sum::<f64>() / trajs.len() as f64
    }

    #[test]
    fn registry_shapes() {
        let g = make_model(GRIDWORLD).unwrap();
        assert_eq!((g.obs_dim(), g.action_count(), g.horizon()), (25, 4, 20));
        let c = make_model(CLIFFWORLD).unwrap();
        assert_eq!((c.obs_dim(), c.action_count(), c.horizon()), (24, 4, 15));
        let l = make_model(LINEWORLD).unwrap();
        assert_eq!((l.obs_dim(), l.action_count(), l.horizon()), (2, 3, 30));
    }

    #[test]
    fn true_reward_reproduces_rollout_rewards() {
        let seeds = SeedStream::new(21);
        for name in REGISTRY {
            let mut env = make_env(name, &seeds).unwrap();
            let policy = UniformPolicy {
                actions: env.action_count(),
            };
            let trajs = rollout(&policy, &mut env, 3, &mut seeds.derive("a").rng()).unwrap();
            for traj in &trajs {
                for (t, r) in traj.rewards.as_ref().unwrap().iter().enumerate() {
                    let again = env.model().true_reward(&traj.observations[t], traj.actions[t]).unwrap();
                    assert_eq!(again, *r, "{name}");
                }
            }
        }
    }

    #[test]
    fn unknown_name_lists_registry() {
        let err = make_env("unknown", &SeedStream::new(0)).unwrap_err();
        let msg = err.to_string();
        for name in REGISTRY {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn construction_is_deterministic() {
        assert_eq!(make_model(GRIDWORLD).unwrap(), make_model(GRIDWORLD).unwrap());
    }

    #[test]
    fn step_after_horizon_fails() {
        let mut env = make_env(CLIFFWORLD, &SeedStream::new(0)).unwrap();
        env.reset();
        for t in 0..15 {
            let r = env.step(0).unwrap();
            assert_eq!(r.done, t == 14);
        }
        assert!(matches!(env.step(0), Err(Error::EpisodeOver { horizon: 15 })));
    }

    #[test]
    fn zero_episodes() {
        let mut env = make_env(GRIDWORLD, &SeedStream::new(0)).unwrap();
        let mut rng = SeedStream::new(1).rng();
        assert!(rollout(&UniformPolicy { actions: 4 }, &mut env, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn mismatched_policy_is_rejected() {
        let mut env = make_env(GRIDWORLD, &SeedStream::new(0)).unwrap();
        let mut rng = SeedStream::new(1).rng();
        assert!(rollout(&UniformPolicy { actions: 3 }, &mut env, 1, &mut rng).is_err());
    }

    #[test]
    fn rollouts_have_fixed_length() {
        for name in REGISTRY {
            let seeds = SeedStream::new(3);
            let mut env = make_env(name, &seeds).unwrap();
            let mut rng = seeds.derive("policy").rng();
            let pol = UniformPolicy {
                actions: env.action_count(),
            };
            let trajs = rollout(&pol, &mut env, 50, &mut rng).unwrap();
            assert_eq!(trajs.len(), 50);
            for t in &trajs {
                assert_eq!(t.len(), env.horizon());
                assert!(t.terminal);
                assert_eq!(t.rewards.as_ref().unwrap().len(), env.horizon());
            }
        }
    }

    #[test]
    fn expert_beats_random_everywhere() {
        for name in REGISTRY {
            let seeds = SeedStream::new(5);
            let mut env = make_env(name, &seeds).unwrap();
            let mut rng = seeds.derive("policy").rng();
            let expert = ExpertPolicy::for_model(env.model());
            let random = UniformPolicy {
                actions: env.action_count(),
            };
            let e = mean_return(&rollout(&expert, &mut env, 200, &mut rng).unwrap());
            let r = mean_return(&rollout(&random, &mut env, 200, &mut rng).unwrap());
            assert!(e > r, "{name}: expert {e} random {r}");
        }
    }

    #[test]
    fn lineworld_controller_gap() {
        let seeds = SeedStream::new(8);
        let mut env = make_env(LINEWORLD, &seeds).unwrap();
        let mut rng = seeds.derive("policy").rng();
        let expert = ExpertPolicy::for_model(env.model());
        let e = mean_return(&rollout(&expert, &mut env, 500, &mut rng).unwrap());
        let r = mean_return(&rollout(&UniformPolicy { actions: 3 }, &mut env, 500, &mut rng).unwrap());
        assert!(e - r >= 10.0, "expert {e} random {r}");
    }

    #[test]
    fn expert_on_two_state_mdp_earns_two() {
        let mdp = TabularMdp::new(
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ],
            vec![vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![1.0, 0.0],
            2,
            None,
        )
        .unwrap();
        let mut env = EnvInstance::new(Arc::new(EnvModel::Tabular(mdp)), &SeedStream::new(0));
        let expert = ExpertPolicy::for_model(env.model());
        let mut rng = SeedStream::new(1).rng();
        for t in rollout(&expert, &mut env, 20, &mut rng).unwrap() {
            assert_eq!(t.total_reward(), Some(2.0));
        }
    }

    #[test]
    fn greedy_return_matches_value_estimate() {
        let model = make_model(GRIDWORLD).unwrap();
        let mdp = model.as_tabular().unwrap().clone();
        let (values, _) = value_iteration(&mdp);
        let v0: f64 = values[0]
            .iter()
            .zip(mdp.initial_distribution())
            .map(|(v, p)| v * p)
            .sum();
        let mut env = EnvInstance::new(Arc::new(model), &SeedStream::new(2));
        let expert = ExpertPolicy::for_model(env.model());
        let mut rng = SeedStream::new(3).rng();
        let returns: Vec<f64> = rollout(&expert, &mut env, 4000, &mut rng)
            .unwrap()
            .iter()
            .map(|t| t.total_reward().unwrap())
            .collect();
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let sd = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - v0).abs() < 4.0 * sd / n.sqrt(), "mc {mean} vs exact {v0}");
    }
}
