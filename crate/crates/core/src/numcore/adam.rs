//! Adam with bias correction, plus the learning-rate schedules the trainers use.

use super::MlpModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(model: &MlpModel, lr: f64) -> Self {
        Self::new(model.num_params(), lr)
    }

    /// One update of `params` from `grads`; `grads` is zeroed afterwards.
    pub fn step_slices(&mut self, params: &mut [f64], grads: &mut [f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state sized for {} params, got params {} / grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            grads[i] = 0.0;
        }
        Ok(())
    }

    pub fn step(&mut self, model: &mut MlpModel) -> Result<()> {
        let (p, g) = model.params_and_grads_mut();
        self.step_slices(p, g)
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(model: &mut MlpModel, state: &mut AdamState) -> Result<()> {
    state.step(model)
}

/// Learning rate as a function of the optimisation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Linear decay to zero over `total_steps`.
    Linear {
        total_steps: u64,
    },
    /// Multiply by `factor` every `every_steps`.
    Step {
        every_steps: u64,
        factor: f64,
    },
}

impl LrSchedule {
    /// Rate for zero-based step `step`.
    pub fn rate(&self, base: f64, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Linear { total_steps } => {
                let total = total_steps.max(1) as f64;
                base * (1.0 - (step as f64 / total).min(1.0))
            }
            LrSchedule::Step { every_steps, factor } => base * factor.powi((step / every_steps.max(1)) as i32),
        }
    }
}
