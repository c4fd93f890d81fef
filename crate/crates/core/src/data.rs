//! Trajectories, flattened transition batches and the trajectory file format.
//!
//! Trajectory files hold one JSON object per line:
//!
//! ```text
//! {"v":1,"obs":[[0.0,1.0],[1.0,0.0]],"acts":[2],"rews":[0.5],"terminal":true}
//! ```
//!
//! Floats are written as the shortest decimal that parses back to the same
//! bits, so `load_trajectories(save_trajectories(x)) == x` exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

/// One fixed-horizon episode.
///
/// `observations` has one more entry than `actions`: the final observation
/// after the last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Option<Vec<f64>>,
    pub terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Sum of ground-truth rewards, if present.
    pub fn total_reward(&self) -> Option<f64> {
        self.rewards.as_ref().map(|r| r.iter().sum())
    }

    /// Same trajectory with the reward channel removed.
    pub fn without_rewards(&self) -> Trajectory {
        Trajectory {
            rewards: None,
            ..self.clone()
        }
    }

    /// Checks the structural invariants. `action_count` additionally bounds
    /// action indices when known.
    pub fn validate(&self, action_count: Option<usize>) -> std::result::Result<(), String> {
        if self.observations.len() != self.actions.len() + 1 {
            return Err(format!(
                "{} observations for {} actions (expected actions + 1)",
                self.observations.len(),
                self.actions.len()
            ));
        }
        if let Some(rews) = &self.rewards {
            if rews.len() != self.actions.len() {
                return Err(format!(
                    "{} rewards for {} actions",
                    rews.len(),
                    self.actions.len()
                ));
            }
        }
        if let Some(first) = self.observations.first() {
            let dim = first.len();
            if let Some(bad) = self.observations.iter().position(|o| o.len() != dim) {
                return Err(format!("observation {bad} has inconsistent dimension"));
            }
        }
        if let Some(n) = action_count {
            if let Some(&a) = self.actions.iter().find(|&&a| a >= n) {
                return Err(format!("action {a} out of range [0, {n})"));
            }
        }
        Ok(())
    }
}

/// Parallel per-step arrays built by [`flatten`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub next_states: Vec<Vec<f64>>,
    pub rewards: Vec<Option<f64>>,
    pub dones: Vec<bool>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Appends the transitions of another batch, preserving order.
    pub fn extend(&mut self, other: TransitionBatch) {
        self.states.extend(other.states);
        self.actions.extend(other.actions);
        self.next_states.extend(other.next_states);
        self.rewards.extend(other.rewards);
        self.dones.extend(other.dones);
    }
}

pub fn flatten(trajectories: &[Trajectory]) -> Result<TransitionBatch> {
    let mut batch = TransitionBatch::default();
    for (index, traj) in trajectories.iter().enumerate() {
        traj.validate(None)
            .map_err(|reason| Error::MalformedTrajectory { index, reason })?;
        let t_len = traj.len();
        for t in 0..t_len {
            batch.states.push(traj.observations[t].clone());
            batch.actions.push(traj.actions[t]);
            batch.next_states.push(traj.observations[t + 1].clone());
            batch
                .rewards
                .push(traj.rewards.as_ref().map(|r| r[t]));
            batch.dones.push(t + 1 == t_len);
        }
    }
    Ok(batch)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    v: u64,
    obs: Vec<Vec<f64>>,
    acts: Vec<usize>,
    rews: Option<Vec<f64>>,
    terminal: bool,
}

fn check_finite(traj: &Trajectory) -> std::result::Result<(), String> {
    let obs_ok = traj.observations.iter().flatten().all(|x| x.is_finite());
    let rew_ok = traj
        .rewards
        .as_ref()
        .is_none_or(|r| r.iter().all(|x| x.is_finite()));
    if obs_ok && rew_ok {
        Ok(())
    } else {
        Err("non-finite value cannot be serialized".into())
    }
}

pub fn save_trajectories(trajectories: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (index, traj) in trajectories.iter().enumerate() {
        traj.validate(None)
            .and_then(|_| check_finite(traj))
            .map_err(|reason| Error::MalformedTrajectory { index, reason })?;
        let record = TrajectoryRecord {
            v: FORMAT_VERSION,
            obs: traj.observations.clone(),
            acts: traj.actions.clone(),
            rews: traj.rewards.clone(),
            terminal: traj.terminal,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates a versioned line-delimited file, returning the
/// decoded records. Shared by every data format in the crate.
pub(crate) fn read_records<T, F>(path: &Path, mut decode: F) -> Result<Vec<T>>
where
    F: FnMut(serde_json::Value) -> std::result::Result<T, String>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(v) = value.get("v") {
            let found = v
                .as_u64()
                .ok_or_else(|| parse_err("version tag is not an integer".into()))?;
            if found != FORMAT_VERSION {
                return Err(Error::Version {
                    path: path.to_path_buf(),
                    line: line_no,
                    found,
                    expected: FORMAT_VERSION,
                });
            }
        }
        records.push(decode(value).map_err(parse_err)?);
    }
    Ok(records)
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    read_records(path.as_ref(), |value| {
        if value.get("v").is_none() {
            return Err("missing version tag".into());
        }
        let rec: TrajectoryRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
        let traj = Trajectory {
            observations: rec.obs,
            actions: rec.acts,
            rewards: rec.rews,
            terminal: rec.terminal,
        };
        traj.validate(None)?;
        Ok(traj)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(t: usize, offset: f64) -> Trajectory {
        Trajectory {
            observations: (0..=t).map(|i| vec![offset + i as f64]).collect(),
            actions: vec![0; t],
            rewards: Some(vec![1.0; t]),
            terminal: true,
        }
    }

    #[test]
    fn flatten_single() {
        let b = flatten(&[traj(3, 0.0)]).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.dones, vec![false, false, true]);
        assert_eq!(b.next_states[2], vec![3.0]);
    }

    #[test]
    fn flatten_empty() {
        assert!(flatten(&[]).unwrap().is_empty());
    }

    #[test]
    fn flatten_concatenates_in_order() {
        let b = flatten(&[traj(2, 0.0), traj(1, 10.0)]).unwrap();
        assert_eq!(b.dones, vec![false, true, true]);
        assert_eq!(b.states, vec![vec![0.0], vec![1.0], vec![10.0]]);
    }

    #[test]
    fn flatten_names_offender() {
        let mut bad = traj(2, 0.0);
        bad.observations.pop();
        match flatten(&[traj(1, 0.0), bad]) {
            Err(Error::MalformedTrajectory { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        save_trajectories(&[traj(2, 0.0), traj(2, 1.0), traj(2, 2.0)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let cut = lines[2].len() / 2;
        lines[2].truncate(cut);
        std::fs::write(&path, lines.join("\n")).unwrap();
        match load_trajectories(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        std::fs::write(
            &path,
            "{\"v\":2,\"obs\":[[0.0]],\"acts\":[],\"rews\":null,\"terminal\":true}\n",
        )
        .unwrap();
        assert!(matches!(load_trajectories(&path), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn fifty_long_trajectories_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        let trajs: Vec<_> = (0..50).map(|i| traj(100, i as f64 * 0.1)).collect();
        save_trajectories(&trajs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 50);
        assert_eq!(load_trajectories(&path).unwrap(), trajs);
    }

    fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
        (1usize..6, 0usize..12, any::<bool>(), any::<bool>()).prop_flat_map(
            |(dim, len, with_rewards, terminal)| {
                let obs = prop::collection::vec(
                    prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, dim),
                    len + 1,
                );
                let acts = prop::collection::vec(0usize..4, len);
                let rews = prop::collection::vec(-1e6f64..1e6, len);
                (obs, acts, rews).prop_map(move |(observations, actions, rewards)| Trajectory {
                    observations,
                    actions,
                    rewards: with_rewards.then_some(rewards),
                    terminal,
                })
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_is_identity(trajs in prop::collection::vec(arb_trajectory(), 0..6)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.jsonl");
            save_trajectories(&trajs, &path).unwrap();
            let back = load_trajectories(&path).unwrap();
            prop_assert_eq!(back.len(), trajs.len());
            for (a, b) in back.iter().zip(&trajs) {
                prop_assert_eq!(a.actions.clone(), b.actions.clone());
                for (x, y) in a.observations.iter().flatten().zip(b.observations.iter().flatten()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn flatten_preserves_length(trajs in prop::collection::vec(arb_trajectory(), 0..6)) {
            let total: usize = trajs.iter().map(Trajectory::len).sum();
            prop_assert_eq!(flatten(&trajs).unwrap().len(), total);
        }
    }
}
