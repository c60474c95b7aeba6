use crate::error::{check_len, Result};
use crate::numkit::axpy;

/// One task's bilevel problem, parameterized by the meta-parameters `θ`.
///
/// `learn` may return the gradient of an explicit loss or, for models trained
/// by a local plasticity rule, the rule's descent direction. Everything
/// downstream only needs the two solutions and the `θ`-partials.
pub trait BilevelProblem: Sync {
    fn fast_dim(&self) -> usize;

    fn meta_dim(&self) -> usize;

    /// `L_learn(φ, θ)`, writing its `φ`-gradient into `grad`.
    fn learn(&self, theta: &[f64], phi: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// `L_eval(φ, θ)`, writing its `φ`-gradient into `grad`.
    fn eval(&self, theta: &[f64], phi: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// `∂θ L_learn(φ, θ)`.
    fn learn_theta_partials(&self, theta: &[f64], phi: &[f64]) -> Result<Vec<f64>>;

    /// `∂θ L_eval(φ, θ)`. Zero for models where `θ` only shapes learning.
    fn eval_theta_partials(&self, _theta: &[f64], _phi: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.meta_dim()])
    }

    /// Starting point of the free phase.
    fn initial_fast(&self, theta: &[f64]) -> Vec<f64>;

    /// Per-coordinate learning-rate multipliers for the inner optimizer.
    fn lr_scale(&self) -> Option<Vec<f64>> {
        None
    }

    /// Projection applied to `θ` after every outer update.
    fn project_meta(&self, _theta: &mut [f64]) {}

    /// Exact `∂²φ L_learn · v`, when the model has it in closed form.
    fn hvp_exact(&self, _theta: &[f64], _phi: &[f64], _v: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    /// Exact `μ · ∂φ∂θ L_learn`, when the model has it in closed form.
    fn cross_dvp_exact(&self, _theta: &[f64], _phi: &[f64], _mu: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }
}

/// `𝓛(φ, θ, β) = L_learn(φ, θ) + β·L_eval(φ, θ)` for a fixed task and `θ`.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedObjective<'a, P: ?Sized> {
    pub problem: &'a P,
    pub theta: &'a [f64],
    pub beta: f64,
}

impl<'a, P: BilevelProblem + ?Sized> AugmentedObjective<'a, P> {
    pub fn new(problem: &'a P, theta: &'a [f64], beta: f64) -> Self {
        Self {
            problem,
            theta,
            beta,
        }
    }

    /// Value and `φ`-gradient.
    pub fn eval(&self, phi: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("augmented objective φ", self.problem.fast_dim(), phi.len())?;
        check_len("augmented objective θ", self.problem.meta_dim(), self.theta.len())?;
        let mut grad = vec![0.0; phi.len()];
        let mut value = self.problem.learn(self.theta, phi, &mut grad)?;
        if self.beta != 0.0 {
            let mut g_eval = vec![0.0; phi.len()];
            value += self.beta * self.problem.eval(self.theta, phi, &mut g_eval)?;
            axpy(self.beta, &g_eval, &mut grad);
        }
        Ok((value, grad))
    }

    /// `∂θ𝓛(φ, θ, β)`.
    pub fn theta_partials(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.problem.learn_theta_partials(self.theta, phi)?;
        check_len("θ-partials", self.problem.meta_dim(), p.len())?;
        if self.beta != 0.0 {
            let e = self.problem.eval_theta_partials(self.theta, phi)?;
            check_len("θ-partials", self.problem.meta_dim(), e.len())?;
            axpy(self.beta, &e, &mut p);
        }
        Ok(p)
    }
}
