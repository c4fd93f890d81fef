//! One-dimensional continuous navigation task.
//!
//! The agent sits at a position in `[-1, 1]` and chooses to move left, stay or
//! move right by a fixed step, perturbed by Gaussian noise. It is paid
//! `-|position - target|` every step.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyCheckpoint};

pub const LEFT: usize = 0;
pub const STAY: usize = 1;
pub const RIGHT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineWorld {
    pub target: f64,
    pub step: f64,
    pub noise: f64,
    pub horizon: usize,
}

impl Default for LineWorld {
    fn default() -> Self {
        Self {
            target: 0.7,
            step: 0.2,
            noise: 0.05,
            horizon: 30,
        }
    }
}

/// Position and the velocity commanded by the previous action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineState {
    pub position: f64,
    pub velocity: f64,
}

impl LineWorld {
    pub const OBS_DIM: usize = 2;
    pub const ACTIONS: usize = 3;

    pub fn observation(&self, state: &LineState) -> Vec<f64> {
        vec![state.position, state.velocity]
    }

    pub fn reward(&self, state: &LineState) -> f64 {
        -(state.position - self.target).abs()
    }

    pub fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> LineState {
        LineState {
            position: rng.gen_range(-1.0..=1.0),
            velocity: 0.0,
        }
    }

    pub fn transition<R: Rng + ?Sized>(
        &self,
        state: &LineState,
        action: usize,
        rng: &mut R,
    ) -> Result<LineState> {
        if action >= Self::ACTIONS {
            return Err(Error::InvalidAction {
                action,
                action_count: Self::ACTIONS,
            });
        }
        let velocity = (action as f64 - 1.0) * self.step;
        let position = (state.position + velocity + self.noise * gaussian::standard_normal(rng)).clamp(-1.0, 1.0);
        Ok(LineState { position, velocity })
    }
}

/// Bang-bang controller with a dead zone around the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineController {
    pub target: f64,
    pub band: f64,
}

impl Default for LineController {
    fn default() -> Self {
        let world = LineWorld::default();
        Self {
            target: world.target,
            band: world.step / 2.0,
        }
    }
}

impl LineController {
    pub fn choose(&self, position: f64) -> usize {
        if position < self.target - self.band {
            RIGHT
        } else if position > self.target + self.band {
            LEFT
        } else {
            STAY
        }
    }
}

impl Policy for LineController {
    fn action_count(&self) -> usize {
        LineWorld::ACTIONS
    }

    fn log_probs(&self, obs: &[f64], _t: usize) -> Result<Vec<f64>> {
        if obs.len() != LineWorld::OBS_DIM {
            return Err(Error::Dimension {
                what: "lineworld observation",
                expected: LineWorld::OBS_DIM,
                got: obs.len(),
            });
        }
        let mut lp = vec![f64::NEG_INFINITY; LineWorld::ACTIONS];
        lp[self.choose(obs[0])] = 0.0;
        Ok(lp)
    }

    fn act(&self, obs: &[f64], t: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        self.log_probs(obs, t)?;
        Ok(self.choose(obs[0]))
    }

    fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint::Controller {
            v: FORMAT_VERSION,
            controller: *self,
        }
    }
}

mod gaussian {
    use rand::Rng;

    /// Box-Muller transform.
    pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::SeedStream;

    #[test]
    fn positions_stay_in_bounds() {
        let world = LineWorld::default();
        let mut rng = SeedStream::new(0).rng();
        let mut s = LineState {
            position: 0.95,
            velocity: 0.0,
        };
        for _ in 0..100 {
            s = world.transition(&s, RIGHT, &mut rng).unwrap();
            assert!((-1.0..=1.0).contains(&s.position));
        }
        assert!((s.velocity - 0.2).abs() < 1e-15);
    }

    #[test]
    fn controller_moves_toward_target() {
        let c = LineController::default();
        assert_eq!(c.choose(-0.5), RIGHT);
        assert_eq!(c.choose(0.95), LEFT);
        assert_eq!(c.choose(0.72), STAY);
    }

    #[test]
    fn normal_draws_have_unit_variance() {
        let mut rng = SeedStream::new(11).rng();
        let xs: Vec<f64> = (0..20_000).map(|_| gaussian::standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.04);
    }
}
