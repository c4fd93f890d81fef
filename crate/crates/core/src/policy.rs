//! Policies over discrete actions and their checkpoint format.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::FORMAT_VERSION;
use crate::envs::lineworld::LineController;
use crate::error::{Error, Result};
use crate::nn::{Head, Mlp, MlpRecord};

/// A (possibly time-dependent) stochastic policy over `action_count` actions.
pub trait Policy: Send + Sync {
    fn action_count(&self) -> usize;

    /// Log-probabilities of every action at observation `obs` and step `t`.
    fn log_probs(&self, obs: &[f64], t: usize) -> Result<Vec<f64>>;

    fn act(&self, obs: &[f64], t: usize, rng: &mut dyn RngCore) -> Result<usize> {
        let lp = self.log_probs(obs, t)?;
        Ok(sample_log_probs(&lp, rng))
    }

    fn checkpoint(&self) -> PolicyCheckpoint;
}

/// Inverse-CDF draw from a categorical distribution given in log space.
pub fn sample_log_probs<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, lp) in log_probs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Index of the hot coordinate of a one-hot observation.
pub fn decode_one_hot(obs: &[f64], state_count: usize) -> Result<usize> {
    if obs.len() != state_count {
        return Err(Error::Dimension {
            what: "one-hot observation",
            expected: state_count,
            got: obs.len(),
        });
    }
    let mut best = 0;
    for (i, v) in obs.iter().enumerate() {
        if *v > obs[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn one_hot(index: usize, size: usize) -> Vec<f64> {
    let mut v = vec![0.0; size];
    v[index] = 1.0;
    v
}

/// Categorical policy parameterized by an MLP with a log-softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    pub net: Mlp,
}

impl MlpPolicy {
    pub fn new(net: Mlp) -> Result<Self> {
        if net.head() != Head::LogSoftmax {
            return Err(Error::InvalidModel(
                "policy networks need a log-softmax head".into(),
            ));
        }
        Ok(Self { net })
    }

    pub fn random<R: Rng + ?Sized>(obs_dim: usize, action_count: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(
                &Mlp::default_widths(obs_dim, action_count),
                Head::LogSoftmax,
                rng,
            ),
        }
    }
}

impl Policy for MlpPolicy {
    fn action_count(&self) -> usize {
        self.net.output_dim()
    }

    fn log_probs(&self, obs: &[f64], _t: usize) -> Result<Vec<f64>> {
        self.net.forward(obs)
    }

    fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint::Mlp(self.net.to_record())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformPolicy {
    pub actions: usize,
}

impl Policy for UniformPolicy {
    fn action_count(&self) -> usize {
        self.actions
    }

    fn log_probs(&self, _obs: &[f64], _t: usize) -> Result<Vec<f64>> {
        Ok(vec![-(self.actions as f64).ln(); self.actions])
    }

    fn act(&self, _obs: &[f64], _t: usize, rng: &mut dyn RngCore) -> Result<usize> {
        Ok(rng.gen_range(0..self.actions))
    }

    fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint::Uniform {
            v: FORMAT_VERSION,
            uniform: self.actions,
        }
    }
}

/// Time-dependent tabular policy: `probs[t][s][a]`, one table per step.
///
/// Observations are one-hot state encodings. Steps past the last table reuse
/// the last table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl TabularPolicy {
    pub fn uniform(horizon: usize, states: usize, actions: usize) -> Self {
        Self {
            probs: vec![vec![vec![1.0 / actions as f64; actions]; states]; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.probs.len()
    }

    pub fn state_count(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.probs[t.min(self.horizon() - 1)][s][a]
    }

    pub fn row(&self, t: usize, s: usize) -> &[f64] {
        &self.probs[t.min(self.horizon() - 1)][s]
    }

    /// Checks that every row is a probability vector within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.probs.is_empty() {
            return Err(Error::InvalidModel("tabular policy has no steps".into()));
        }
        for (t, table) in self.probs.iter().enumerate() {
            for (s, row) in table.iter().enumerate() {
                let total: f64 = row.iter().sum();
                if row.iter().any(|p| *p < -tol || !p.is_finite()) || (total - 1.0).abs() > tol {
                    return Err(Error::InvalidModel(format!(
                        "policy row (t={t}, s={s}) is not a distribution"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Tabulates any policy on one-hot observations.
    pub fn from_policy(
        policy: &dyn Policy,
        horizon: usize,
        states: usize,
    ) -> Result<TabularPolicy> {
        let mut probs = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut table = Vec::with_capacity(states);
            for s in 0..states {
                let lp = policy.log_probs(&one_hot(s, states), t)?;
                table.push(lp.iter().map(|l| l.exp()).collect());
            }
            probs.push(table);
        }
        Ok(TabularPolicy { probs })
    }
}

impl Policy for TabularPolicy {
    fn action_count(&self) -> usize {
        self.probs
            .first()
            .and_then(|t| t.first())
            .map_or(0, Vec::len)
    }

    fn log_probs(&self, obs: &[f64], t: usize) -> Result<Vec<f64>> {
        let s = decode_one_hot(obs, self.state_count())?;
        Ok(self.row(t, s).iter().map(|p| p.ln()).collect())
    }

    fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint::Tabular {
            v: FORMAT_VERSION,
            tabular: self.probs.clone(),
        }
    }
}

/// Serialized policy. Network policies use the plain network record; the
/// other kinds are distinguished by their payload key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyCheckpoint {
    Mlp(MlpRecord),
    Tabular {
        v: u64,
        tabular: Vec<Vec<Vec<f64>>>,
    },
    Controller {
        v: u64,
        controller: LineController,
    },
    Uniform {
        v: u64,
        uniform: usize,
    },
}

impl PolicyCheckpoint {
    fn version(&self) -> u64 {
        match self {
            PolicyCheckpoint::Mlp(r) => r.v,
            PolicyCheckpoint::Tabular { v, .. }
            | PolicyCheckpoint::Controller { v, .. }
            | PolicyCheckpoint::Uniform { v, .. } => *v,
        }
    }

    pub fn into_policy(self) -> Result<Box<dyn Policy>> {
        if self.version() != FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "checkpoint version {} unsupported",
                self.version()
            )));
        }
        Ok(match self {
            PolicyCheckpoint::Mlp(rec) => {
                Box::new(MlpPolicy::new(Mlp::from_record(&rec, Head::LogSoftmax)?)?)
            }
            PolicyCheckpoint::Tabular { tabular, .. } => {
                let p = TabularPolicy { probs: tabular };
                p.validate(1e-9)?;
                Box::new(p)
            }
            PolicyCheckpoint::Controller { controller, .. } => Box::new(controller),
            PolicyCheckpoint::Uniform { uniform, .. } => {
                if uniform == 0 {
                    return Err(Error::InvalidModel("uniform policy over 0 actions".into()));
                }
                Box::new(UniformPolicy { actions: uniform })
            }
        })
    }

    /// Observation width expected by the policy, when it is fixed.
    pub fn obs_dim(&self) -> Option<usize> {
        match self {
            PolicyCheckpoint::Mlp(r) => r.widths.first().copied(),
            PolicyCheckpoint::Tabular { tabular, .. } => tabular.first().map(Vec::len),
            PolicyCheckpoint::Controller { .. } => Some(2),
            PolicyCheckpoint::Uniform { .. } => None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut records = crate::data::read_records(path, |value| {
            serde_json::from_value::<PolicyCheckpoint>(value).map_err(|e| e.to_string())
        })?;
        match records.len() {
            1 => Ok(records.pop().unwrap()),
            n => Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("expected one checkpoint record, found {n}"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::SeedStream;

    #[test]
    fn sampling_matches_probabilities() {
        let lp = [0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()];
        let mut rng = SeedStream::new(1).rng();
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[sample_log_probs(&lp, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.5, 0.3]) {
            let freq = *c as f64 / 30_000.0;
            assert!((freq - p).abs() < 0.015, "{freq} vs {p}");
        }
    }

    #[test]
    fn deterministic_rows_never_pick_zero_mass() {
        let lp = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        let mut rng = SeedStream::new(2).rng();
        for _ in 0..1000 {
            assert_eq!(sample_log_probs(&lp, &mut rng), 1);
        }
    }

    #[test]
    fn checkpoints_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeedStream::new(4).rng();
        let cases = vec![
            MlpPolicy::random(3, 2, &mut rng).checkpoint(),
            TabularPolicy::uniform(2, 3, 2).checkpoint(),
            UniformPolicy { actions: 3 }.checkpoint(),
            LineController::default().checkpoint(),
        ];
        for (i, ckpt) in cases.into_iter().enumerate() {
            let path = dir.path().join(format!("p{i}.ckpt"));
            ckpt.save(&path).unwrap();
            let back = PolicyCheckpoint::load(&path).unwrap();
            assert_eq!(back, ckpt);
            back.into_policy().unwrap();
        }
    }

    #[test]
    fn mlp_checkpoint_uses_plain_network_record() {
        let mut rng = SeedStream::new(5).rng();
        let text = serde_json::to_string(&MlpPolicy::random(2, 2, &mut rng).checkpoint()).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, vec!["biases", "v", "weights", "widths"]);
    }
}
