//! AdamW with decoupled weight decay, plus the linear learning-rate
//! schedule used by every training run.

use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// AdamW hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment estimates and step counter for one parameter.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl AdamWState {
    pub fn new(shape: &[usize]) -> Self {
        AdamWState {
            m: Tensor::zeros(shape.to_vec()),
            v: Tensor::zeros(shape.to_vec()),
            step: 0,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
pub fn adamw_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if cfg.lr <= 0.0 {
        return Err(invalid("adamw_step", "lr must be positive"));
    }
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::ShapeMismatch {
            op: "adamw_step",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::powf(cfg.beta1, t as f32);
    let bc2 = 1.0 - libm::powf(cfg.beta2, t as f32);
    for i in 0..param.numel() {
        let g = grad.data()[i];
        let m = cfg.beta1 * state.m.data()[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v.data()[i] + (1.0 - cfg.beta2) * g * g;
        state.m.data_mut()[i] = m;
        state.v.data_mut()[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        let p = &mut param.data_mut()[i];
        // Decoupled weight decay acts on the parameter, not the gradient.
        *p -= cfg.lr * cfg.weight_decay * *p;
        *p -= cfg.lr * m_hat / (libm::sqrtf(v_hat) + cfg.eps);
    }
    Ok(())
}

/// AdamW over a named parameter set.
pub struct AdamW {
    cfg: AdamWConfig,
    states: BTreeMap<String, AdamWState>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            states: BTreeMap::new(),
        }
    }

    /// Apply one step to every named parameter with a gradient, at the
    /// given learning rate (the schedule overrides the config lr).
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f32,
    ) -> Result<()> {
        let cfg = AdamWConfig { lr, ..self.cfg.clone() };
        for (name, grad) in grads {
            let param = params.get_mut(name).ok_or_else(|| {
                invalid("adamw", alloc::format!("gradient for unknown parameter {name}"))
            })?;
            let state = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdamWState::new(param.shape()));
            adamw_step(param, grad, state, &cfg)?;
        }
        Ok(())
    }
}

/// Linearly decaying learning rate over a fixed number of steps.
#[derive(Debug, Clone, Copy)]
pub struct LinearLr {
    pub start: f32,
    pub end: f32,
    pub steps: u64,
}

impl LinearLr {
    /// Learning rate at step `s` (0-based); start at step 0, end at the
    /// final step.
    pub fn at(&self, s: u64) -> f32 {
        if self.steps <= 1 {
            return self.start;
        }
        let frac = s.min(self.steps - 1) as f32 / (self.steps - 1) as f32;
        self.start + (self.end - self.start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros(vec![3]);
        let mut st = AdamWState::new(&[3]);
        adamw_step(&mut p, &g, &mut st, &AdamWConfig::default()).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // One step on a scalar with g = 0.5, lr = 0.1, defaults otherwise.
        // m = 0.05, v = 0.00025; bias-corrected: m_hat = 0.5, v_hat = 0.25;
        // update = lr * 0.5 / (0.5 + 1e-8) ~= 0.1.
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(0.5);
        let mut st = AdamWState::new(&[]);
        let cfg = AdamWConfig {
            lr: 0.1,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &g, &mut st, &cfg).unwrap();
        let expect = 1.0 - 0.1 * 0.5 / (0.25f32.sqrt() + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-7, "{} vs {expect}", p.data()[0]);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = Tensor::scalar(2.0);
        let g = Tensor::scalar(0.0);
        let mut st = AdamWState::new(&[]);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &g, &mut st, &cfg).unwrap();
        // Zero gradient: only the decay term applies.
        assert!((p.data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-7);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamWState::new(&[]);
        let cfg = AdamWConfig {
            lr: 0.0,
            ..AdamWConfig::default()
        };
        assert!(adamw_step(&mut p, &g, &mut st, &cfg).is_err());
    }

    #[test]
    fn linear_schedule_hits_both_endpoints() {
        let sched = LinearLr {
            start: 1e-4,
            end: 1e-5,
            steps: 2000,
        };
        assert_eq!(sched.at(0), 1e-4);
        assert!((sched.at(1999) - 1e-5).abs() < 1e-9);
        assert!(sched.at(1000) < 1e-4 && sched.at(1000) > 1e-5);
    }
}
