use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradBuffer, Mlp};

pub const DEFAULT_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self {
            config,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn for_net(config: AdamConfig, net: &Mlp) -> Self {
        Self::new(config, net.param_count())
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step on `params` along `grads` (gradient of a loss to minimize).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                what: "adam parameters",
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let g = g * scale;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn step_net(&mut self, net: &mut Mlp, grads: &GradBuffer) -> Result<()> {
        if grads.widths() != net.widths() {
            return Err(Error::Dimension {
                what: "gradient buffer",
                expected: net.param_count(),
                got: grads.values.len(),
            });
        }
        self.step(net.params_mut(), &grads.values)
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        let mut state = AdamState::new(AdamConfig::with_lr(0.01), 3);
        let mut params = vec![1.0, 1.0, 1.0];
        state.step(&mut params, &[2.5, -0.3, 7.0]).unwrap();
        // m_hat / sqrt(v_hat) = sign(g) at t = 1, up to eps.
        assert!((params[0] - 0.99).abs() < 1e-8);
        assert!((params[1] - 1.01).abs() < 1e-7);
        assert!((params[2] - 0.99).abs() < 1e-8);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut state = AdamState::new(AdamConfig::default(), 2);
        let mut params = vec![0.3, -0.4];
        for _ in 0..100 {
            state.step(&mut params, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(params, vec![0.3, -0.4]);
    }

    #[test]
    fn identical_calls_are_deterministic() {
        let mut a = AdamState::new(AdamConfig::default(), 2);
        let mut b = a.clone();
        let (mut pa, mut pb) = (vec![0.1, 0.2], vec![0.1, 0.2]);
        a.step(&mut pa, &[0.5, -1.0]).unwrap();
        b.step(&mut pb, &[0.5, -1.0]).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut state = AdamState::new(AdamConfig::default(), 1);
        let mut params = vec![0.0];
        assert!(matches!(
            state.step(&mut params, &[f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(state.steps(), 0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let config = AdamConfig {
            clip_norm: Some(DEFAULT_CLIP_NORM),
            ..AdamConfig::default()
        };
        let mut clipped = AdamState::new(config, 2);
        let mut plain = AdamState::new(AdamConfig::default(), 2);
        let (mut p1, mut p2) = (vec![0.0, 0.0], vec![0.0, 0.0]);
        for _ in 0..3 {
            clipped.step(&mut p1, &[300.0, 400.0]).unwrap();
            plain.step(&mut p2, &[300.0, 400.0]).unwrap();
        }
        // Adam is scale invariant for a constant gradient, so both agree.
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-9);
        }
        let m_norm = (clipped.m[0].powi(2) + clipped.m[1].powi(2)).sqrt();
        assert!(m_norm <= DEFAULT_CLIP_NORM + 1e-9);
    }
}
