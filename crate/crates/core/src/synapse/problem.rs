use serde::{Deserialize, Serialize};

use super::rules::{lambda_project, regularized_learn_loss, SynapseMeta};
use crate::bilevel::BilevelProblem;
use crate::error::{check_len, Result};

/// A task's data losses over the fast weights, independent of `θ`.
pub trait DataLoss: Sync {
    fn dim(&self) -> usize;

    /// Learn loss and its gradient (or a plasticity rule's descent direction).
    fn learn(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn eval(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// Exact Hessian-vector product of the learn loss, if available.
    fn learn_hvp(&self, _phi: &[f64], _v: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    fn lr_scale(&self) -> Option<Vec<f64>> {
        None
    }
}

impl<D: DataLoss + ?Sized> DataLoss for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn learn(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        (**self).learn(phi, grad)
    }
    fn eval(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        (**self).eval(phi, grad)
    }
    fn learn_hvp(&self, phi: &[f64], v: &[f64]) -> Option<Result<Vec<f64>>> {
        (**self).learn_hvp(phi, v)
    }
    fn lr_scale(&self) -> Option<Vec<f64>> {
        (**self).lr_scale()
    }
}

/// How the attraction strengths enter `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Held at the base value; not meta-learned.
    Fixed,
    /// One learned `λ` per weight.
    PerParam,
    /// A single learned `λ` shared by every weight.
    Shared,
}

/// Which synaptic quantities are meta-learned.
///
/// `θ` is laid out as `[ω (if learned), λ (per weight or one shared)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynapseLayout {
    pub learn_omega: bool,
    pub lambda: LambdaMode,
}

impl SynapseLayout {
    pub const OMEGA: Self = Self {
        learn_omega: true,
        lambda: LambdaMode::Fixed,
    };
    pub const LAMBDA: Self = Self {
        learn_omega: false,
        lambda: LambdaMode::PerParam,
    };
    pub const BOTH: Self = Self {
        learn_omega: true,
        lambda: LambdaMode::PerParam,
    };

    pub fn meta_dim(&self, n: usize) -> usize {
        let w = if self.learn_omega { n } else { 0 };
        let l = match self.lambda {
            LambdaMode::Fixed => 0,
            LambdaMode::PerParam => n,
            LambdaMode::Shared => 1,
        };
        w + l
    }

    fn lambda_offset(&self, n: usize) -> usize {
        if self.learn_omega {
            n
        } else {
            0
        }
    }

    /// Packs the learned parts of `meta` into `θ`. A shared `λ` is read from
    /// the first weight.
    pub fn pack(&self, meta: &SynapseMeta) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.meta_dim(meta.len()));
        if self.learn_omega {
            theta.extend_from_slice(&meta.omega);
        }
        match self.lambda {
            LambdaMode::Fixed => {}
            LambdaMode::PerParam => theta.extend_from_slice(&meta.lambda),
            LambdaMode::Shared => theta.push(meta.lambda.first().copied().unwrap_or(0.0)),
        }
        theta
    }

    /// Overlays the learned parts in `θ` onto `base`.
    pub fn unpack(&self, theta: &[f64], base: &SynapseMeta) -> Result<SynapseMeta> {
        let n = base.len();
        check_len("synapse θ", self.meta_dim(n), theta.len())?;
        let mut meta = base.clone();
        if self.learn_omega {
            meta.omega.copy_from_slice(&theta[..n]);
        }
        let off = self.lambda_offset(n);
        match self.lambda {
            LambdaMode::Fixed => {}
            LambdaMode::PerParam => meta.lambda.copy_from_slice(&theta[off..off + n]),
            LambdaMode::Shared => meta.lambda.iter_mut().for_each(|l| *l = theta[off]),
        }
        Ok(meta)
    }

    /// Folds per-weight `(ω, λ)` slots into `θ`'s layout.
    fn fold(&self, omega_slot: Vec<f64>, lambda_slot: Vec<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(omega_slot.len() * 2);
        if self.learn_omega {
            out.extend(omega_slot);
        }
        match self.lambda {
            LambdaMode::Fixed => {}
            LambdaMode::PerParam => out.extend(lambda_slot),
            LambdaMode::Shared => out.push(lambda_slot.iter().sum()),
        }
        out
    }
}

/// A data loss consolidated by complex synapses; `θ` holds the learned
/// synaptic quantities per [`SynapseLayout`].
#[derive(Debug, Clone)]
pub struct SynapseProblem<D> {
    pub data: D,
    pub layout: SynapseLayout,
    /// Values of every non-learned synaptic quantity.
    pub base: SynapseMeta,
    pub lambda_min: f64,
}

impl<D: DataLoss> SynapseProblem<D> {
    pub fn new(data: D, layout: SynapseLayout, base: SynapseMeta) -> Result<Self> {
        check_len("synapse base", data.dim(), base.len())?;
        check_len("synapse base λ", data.dim(), base.lambda.len())?;
        Ok(Self {
            data,
            layout,
            base,
            lambda_min: 0.0,
        })
    }

    pub fn with_lambda_min(mut self, lambda_min: f64) -> Self {
        self.lambda_min = lambda_min;
        self
    }

    /// Synaptic state for `θ`.
    pub fn meta(&self, theta: &[f64]) -> Result<SynapseMeta> {
        self.layout.unpack(theta, &self.base)
    }

    /// `θ` that reproduces the base state.
    pub fn initial_theta(&self) -> Vec<f64> {
        self.layout.pack(&self.base)
    }
}

impl<D: DataLoss> BilevelProblem for SynapseProblem<D> {
    fn fast_dim(&self) -> usize {
        self.data.dim()
    }

    fn meta_dim(&self) -> usize {
        self.layout.meta_dim(self.data.dim())
    }

    fn learn(&self, theta: &[f64], phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        let meta = self.meta(theta)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let v = self.data.learn(phi, grad)?;
        regularized_learn_loss(v, grad, phi, &meta)
    }

    fn eval(&self, _theta: &[f64], phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.data.eval(phi, grad)
    }

    fn learn_theta_partials(&self, theta: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
        let meta = self.meta(theta)?;
        check_len("synapse φ", meta.len(), phi.len())?;
        let mut w = Vec::with_capacity(phi.len());
        let mut l = Vec::with_capacity(phi.len());
        for i in 0..phi.len() {
            let d = phi[i] - meta.omega[i];
            w.push(-meta.lambda[i] * d);
            l.push(0.5 * d * d);
        }
        Ok(self.layout.fold(w, l))
    }

    fn initial_fast(&self, theta: &[f64]) -> Vec<f64> {
        match self.meta(theta) {
            Ok(m) => m.omega,
            Err(_) => self.base.omega.clone(),
        }
    }

    fn lr_scale(&self) -> Option<Vec<f64>> {
        self.data.lr_scale()
    }

    fn project_meta(&self, theta: &mut [f64]) {
        let n = self.data.dim();
        let off = self.layout.lambda_offset(n);
        if self.layout.lambda != LambdaMode::Fixed {
            lambda_project(&mut theta[off..], self.lambda_min);
        }
    }

    fn hvp_exact(&self, theta: &[f64], phi: &[f64], v: &[f64]) -> Option<Result<Vec<f64>>> {
        let out = self.data.learn_hvp(phi, v)?;
        Some(out.and_then(|mut hv| {
            let meta = self.meta(theta)?;
            check_len("hvp v", phi.len(), v.len())?;
            for i in 0..hv.len() {
                hv[i] += meta.lambda[i] * v[i];
            }
            Ok(hv)
        }))
    }

    fn cross_dvp_exact(&self, theta: &[f64], phi: &[f64], mu: &[f64]) -> Option<Result<Vec<f64>>> {
        let run = || -> Result<Vec<f64>> {
            let meta = self.meta(theta)?;
            check_len("cross-derivative μ", phi.len(), mu.len())?;
            let w = (0..phi.len()).map(|i| -mu[i] * meta.lambda[i]).collect();
            let l = (0..phi.len()).map(|i| mu[i] * (phi[i] - meta.omega[i])).collect();
            Ok(self.layout.fold(w, l))
        };
        Some(run())
    }
}

