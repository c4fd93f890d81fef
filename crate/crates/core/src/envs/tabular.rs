//! Explicit finite-horizon MDPs and the registry's tabular environments.

use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::{one_hot, TabularPolicy};

const SIMPLEX_TOL: f64 = 1e-12;

/// Finite-horizon, undiscounted MDP with an explicit model.
///
/// Rewards are indexed by the state and action taken; observations are the
/// one-hot encoding of the state, and `features` is the feature map used by
/// linear reward models.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    state_count: usize,
    action_count: usize,
    horizon: usize,
    /// Flat `[s][a][s']`.
    transitions: Vec<f64>,
    /// Flat `[s][a]`.
    reward: Vec<f64>,
    initial: Vec<f64>,
    features: Vec<Vec<f64>>,
}

impl TabularMdp {
    /// Builds and validates an MDP. `transitions[s][a]` is a distribution over
    /// next states. When `features` is `None` the one-hot map is used.
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        initial: Vec<f64>,
        horizon: usize,
        features: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let state_count = transitions.len();
        if state_count == 0 {
            return Err(Error::InvalidModel("no states".into()));
        }
        let action_count = transitions[0].len();
        if action_count == 0 {
            return Err(Error::InvalidModel("no actions".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        let mut flat = Vec::with_capacity(state_count * action_count * state_count);
        for (s, rows) in transitions.iter().enumerate() {
            if rows.len() != action_count {
                return Err(Error::InvalidModel(format!("state {s} has wrong action count")));
            }
            for (a, row) in rows.iter().enumerate() {
                check_simplex(row, state_count, &format!("transitions[{s}][{a}]"))?;
                flat.extend_from_slice(row);
            }
        }
        if reward.len() != state_count || reward.iter().any(|r| r.len() != action_count) {
            return Err(Error::InvalidModel("reward table shape mismatch".into()));
        }
        if reward.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward table"));
        }
        check_simplex(&initial, state_count, "initial distribution")?;
        let features = match features {
            Some(f) => {
                let d = f.first().map_or(0, Vec::len);
                if f.len() != state_count || d == 0 || f.iter().any(|row| row.len() != d) {
                    return Err(Error::InvalidModel("feature map shape mismatch".into()));
                }
                f
            }
            None => (0..state_count).map(|s| one_hot(s, state_count)).collect(),
        };
        Ok(Self {
            state_count,
            action_count,
            horizon,
            transitions: flat,
            reward: reward.into_iter().flatten().collect(),
            initial,
            features,
        })
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self, s: usize) -> &[f64] {
        &self.features[s]
    }

    /// Distribution over next states after taking `a` in `s`.
    pub fn next_state_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.action_count + a) * self.state_count;
        &self.transitions[start..start + self.state_count]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.next_state_dist(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.action_count + a]
    }

    pub fn reward_table(&self) -> Vec<Vec<f64>> {
        self.reward
            .chunks(self.action_count)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn observation(&self, s: usize) -> Vec<f64> {
        one_hot(s, self.state_count)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.initial, rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_index(self.next_state_dist(s, a), rng)
    }

    /// Same dynamics with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        Ok(Self {
            horizon,
            ..self.clone()
        })
    }
}

fn check_simplex(row: &[f64], n: usize, what: &str) -> Result<()> {
    if row.len() != n {
        return Err(Error::InvalidModel(format!("{what} has length {} (expected {n})", row.len())));
    }
    let total: f64 = row.iter().sum();
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidModel(format!("{what} is not a probability vector (sum {total})")));
    }
    Ok(())
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Finite-horizon Bellman backup. Returns `values` with `horizon + 1` rows
/// (the last is zero) and the greedy time-dependent policy, ties broken
/// toward the lowest action index.
pub fn value_iteration(mdp: &TabularMdp) -> (Vec<Vec<f64>>, TabularPolicy) {
    let (s_n, a_n, h) = (mdp.state_count(), mdp.action_count(), mdp.horizon());
    let mut values = vec![vec![0.0; s_n]; h + 1];
    let mut probs = vec![vec![vec![0.0; a_n]; s_n]; h];
    for t in (0..h).rev() {
        for s in 0..s_n {
            let mut best_a = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..a_n {
                let q = mdp.reward(s, a)
                    + mdp
                        .next_state_dist(s, a)
                        .iter()
                        .zip(&values[t + 1])
                        .map(|(p, v)| p * v)
                        .sum::<f64>();
                if q > best_q {
                    best_q = q;
                    best_a = a;
                }
            }
            values[t][s] = best_q;
            probs[t][s][best_a] = 1.0;
        }
    }
    (values, TabularPolicy { probs })
}

pub const GRID_UP: usize = 0;
pub const GRID_RIGHT: usize = 1;
pub const GRID_DOWN: usize = 2;
pub const GRID_LEFT: usize = 3;

fn grid_move(rows: usize, cols: usize, r: usize, c: usize, a: usize) -> (usize, usize) {
    match a {
        GRID_UP if r > 0 => (r - 1, c),
        GRID_RIGHT if c + 1 < cols => (r, c + 1),
        GRID_DOWN if r + 1 < rows => (r + 1, c),
        GRID_LEFT if c > 0 => (r, c - 1),
        _ => (r, c),
    }
}

/// 5x5 grid, start at the top-left corner, absorbing goal at the bottom-right
/// corner paying 1 per step spent there. With probability `slip` the move is
/// replaced by a uniformly random direction (which may coincide with the
/// intended one). Moves into walls stay put.
pub fn gridworld(size: usize, slip: f64, horizon: usize) -> Result<TabularMdp> {
    let n = size * size;
    let goal = n - 1;
    let mut transitions = vec![vec![vec![0.0; n]; 4]; n];
    let mut reward = vec![vec![0.0; 4]; n];
    for s in 0..n {
        let (r, c) = (s / size, s % size);
        for a in 0..4 {
            if s == goal {
                transitions[s][a][goal] = 1.0;
                reward[s][a] = 1.0;
                continue;
            }
            let (ir, ic) = grid_move(size, size, r, c, a);
            transitions[s][a][ir * size + ic] += 1.0 - slip;
            for d in 0..4 {
                let (sr, sc) = grid_move(size, size, r, c, d);
                transitions[s][a][sr * size + sc] += slip / 4.0;
            }
        }
    }
    let initial = one_hot(0, n);
    TabularMdp::new(transitions, reward, initial, horizon, None)
}

pub const CLIFF_ROWS: usize = 4;
pub const CLIFF_COLS: usize = 6;

/// Deterministic 4x6 cliff walk. The agent starts at the bottom-left corner,
/// the goal is the bottom-right corner (absorbing, +1 per step), and the cells
/// between them are a cliff: stepping into one costs -1 and returns the agent
/// to the start.
pub fn cliffworld(horizon: usize) -> Result<TabularMdp> {
    let (rows, cols) = (CLIFF_ROWS, CLIFF_COLS);
    let n = rows * cols;
    let idx = |r: usize, c: usize| r * cols + c;
    let start = idx(rows - 1, 0);
    let goal = idx(rows - 1, cols - 1);
    let is_cliff = |r: usize, c: usize| r == rows - 1 && c > 0 && c + 1 < cols;
    let mut transitions = vec![vec![vec![0.0; n]; 4]; n];
    let mut reward = vec![vec![0.0; 4]; n];
    for s in 0..n {
        let (r, c) = (s / cols, s % cols);
        for a in 0..4 {
            if s == goal {
                transitions[s][a][goal] = 1.0;
                reward[s][a] = 1.0;
            } else if is_cliff(r, c) {
                // Unreachable; kept so the state space is the full grid.
                transitions[s][a][start] = 1.0;
            } else {
                let (nr, nc) = grid_move(rows, cols, r, c, a);
                if is_cliff(nr, nc) {
                    transitions[s][a][start] = 1.0;
                    reward[s][a] = -1.0;
                } else {
                    transitions[s][a][idx(nr, nc)] = 1.0;
                }
            }
        }
    }
    TabularMdp::new(transitions, reward, one_hot(start, n), horizon, None)
}
