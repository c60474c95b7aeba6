use serde::{Deserialize, Serialize};

use super::linalg::all_finite;
use crate::error::{check_len, Error, Result};

pub const NESTEROV_MOMENTUM: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    /// Plain gradient descent.
    Gd,
    /// Nesterov momentum with coefficient 0.9.
    Nesterov,
    /// Adam with decays 0.9 / 0.999, ε = 1e-8 and bias correction.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSpec {
    pub kind: OptimKind,
    pub lr: f64,
}

impl OptimSpec {
    pub fn gd(lr: f64) -> Self {
        Self {
            kind: OptimKind::Gd,
            lr,
        }
    }

    pub fn nesterov(lr: f64) -> Self {
        Self {
            kind: OptimKind::Nesterov,
            lr,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimKind::Adam,
            lr,
        }
    }

    pub fn build(&self, dim: usize) -> OptimState {
        OptimState::new(*self, dim)
    }
}

/// First-order optimizer with its per-parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    spec: OptimSpec,
    lr_scale: Option<Vec<f64>>,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl OptimState {
    pub fn new(spec: OptimSpec, dim: usize) -> Self {
        let (first, second) = match spec.kind {
            OptimKind::Gd => (Vec::new(), Vec::new()),
            OptimKind::Nesterov => (vec![0.0; dim], Vec::new()),
            OptimKind::Adam => (vec![0.0; dim], vec![0.0; dim]),
        };
        Self {
            spec,
            lr_scale: None,
            first,
            second,
            step: 0,
        }
    }

    /// Per-coordinate learning-rate multipliers.
    pub fn with_lr_scale(mut self, scale: Vec<f64>) -> Self {
        self.lr_scale = Some(scale);
        self
    }

    pub fn spec(&self) -> OptimSpec {
        self.spec
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn lr_at(&self, i: usize) -> f64 {
        match &self.lr_scale {
            Some(s) => self.spec.lr * s[i],
            None => self.spec.lr,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len("optimizer grad", params.len(), grad.len())?;
        if let Some(s) = &self.lr_scale {
            check_len("optimizer lr scale", params.len(), s.len())?;
        }
        if !all_finite(grad) {
            return Err(Error::Numeric {
                context: "optimizer gradient",
                step: self.step as usize,
            });
        }
        self.step += 1;
        match self.spec.kind {
            OptimKind::Gd => {
                for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    *p -= self.lr_at(i) * g;
                }
            }
            OptimKind::Nesterov => {
                check_len("nesterov buffer", params.len(), self.first.len())?;
                for i in 0..params.len() {
                    let buf = NESTEROV_MOMENTUM * self.first[i] + grad[i];
                    self.first[i] = buf;
                    params[i] -= self.lr_at(i) * (grad[i] + NESTEROV_MOMENTUM * buf);
                }
            }
            OptimKind::Adam => {
                check_len("adam buffer", params.len(), self.first.len())?;
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = ADAM_BETA1 * self.first[i] + (1.0 - ADAM_BETA1) * g;
                    self.second[i] = ADAM_BETA2 * self.second[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    params[i] -= self.lr_at(i) * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}
