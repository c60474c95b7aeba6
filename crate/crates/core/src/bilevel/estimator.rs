use serde::{Deserialize, Serialize};

use super::objective::{AugmentedObjective, BilevelProblem};
use super::phase::{polish_newton, solve_phase, PhaseBudget, PhaseResult};
use crate::error::{check_len, Error, Result};
use crate::numkit::OptimSpec;

/// `Δθ = −(1/β)·(nudged − free)` on precomputed `θ`-partials.
pub fn contrastive_delta(nudged_partials: &[f64], free_partials: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(Error::contract(format!("nudging strength must be positive, got {beta}")));
    }
    check_len("contrastive partials", free_partials.len(), nudged_partials.len())?;
    Ok(nudged_partials
        .iter()
        .zip(free_partials)
        .map(|(a, b)| -(a - b) / beta)
        .collect())
}

/// Forward-difference contrastive update from a free (`β = 0`) and a nudged
/// (`β > 0`) solution.
pub fn contrastive_update<P: BilevelProblem + ?Sized>(
    problem: &P,
    theta: &[f64],
    free: &PhaseResult,
    nudged: &PhaseResult,
) -> Result<Vec<f64>> {
    if free.beta != 0.0 {
        return Err(Error::contract("free phase must have β = 0"));
    }
    let beta = nudged.beta;
    if !(beta > 0.0) {
        return Err(Error::contract(format!("nudged phase needs β > 0, got {beta}")));
    }
    let at_nudged = AugmentedObjective::new(problem, theta, beta).theta_partials(&nudged.phi)?;
    let at_free = AugmentedObjective::new(problem, theta, 0.0).theta_partials(&free.phi)?;
    contrastive_delta(&at_nudged, &at_free, beta)
}

/// Centered contrastive update from solutions at `+β` and `−β`.
pub fn symmetric_update<P: BilevelProblem + ?Sized>(
    problem: &P,
    theta: &[f64],
    plus: &PhaseResult,
    minus: &PhaseResult,
) -> Result<Vec<f64>> {
    let beta = plus.beta;
    if !(beta > 0.0) {
        return Err(Error::contract(format!("positive phase needs β > 0, got {beta}")));
    }
    if minus.beta != -beta {
        return Err(Error::contract(format!(
            "symmetric phases need ±β, got {} and {}",
            plus.beta, minus.beta
        )));
    }
    let at_plus = AugmentedObjective::new(problem, theta, beta).theta_partials(&plus.phi)?;
    let at_minus = AugmentedObjective::new(problem, theta, -beta).theta_partials(&minus.phi)?;
    contrastive_delta(&at_plus, &at_minus, 2.0 * beta)
}

/// Produces `Δθ ≈ −∇θ` for a single task.
pub trait MetaGradientEstimator: Sync {
    fn estimate<P: BilevelProblem>(&self, problem: &P, theta: &[f64], init: Vec<f64>) -> Result<TaskEstimate>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEstimate {
    /// Estimated `−∇θ`.
    pub delta: Vec<f64>,
    pub free: PhaseResult,
    /// Nudged phase(s); empty for estimators without one.
    pub second: Vec<PhaseResult>,
    /// Set when the estimator fell back to a cruder scheme.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Forward,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub variant: Variant,
    pub beta: f64,
    pub free_budget: PhaseBudget,
    pub nudged_budget: PhaseBudget,
    pub free_optim: OptimSpec,
    pub nudged_optim: OptimSpec,
    /// Optional damped-Newton refinement applied after each phase.
    pub newton_polish: Option<PhaseBudget>,
}

/// Runs the free phase, then the nudged phase(s) warm-started at `φ̂_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveEstimator {
    pub config: ContrastiveConfig,
}

impl ContrastiveEstimator {
    pub fn new(config: ContrastiveConfig) -> Self {
        Self { config }
    }

    fn phase<P: BilevelProblem>(
        &self,
        problem: &P,
        theta: &[f64],
        beta: f64,
        init: Vec<f64>,
        optim: OptimSpec,
        budget: PhaseBudget,
    ) -> Result<PhaseResult> {
        let obj = AugmentedObjective::new(problem, theta, beta);
        let res = solve_phase(&obj, init, optim, budget)?;
        match self.config.newton_polish {
            Some(polish) => polish_newton(&obj, res, polish),
            None => Ok(res),
        }
    }
}

impl MetaGradientEstimator for ContrastiveEstimator {
    fn estimate<P: BilevelProblem>(&self, problem: &P, theta: &[f64], init: Vec<f64>) -> Result<TaskEstimate> {
        let c = &self.config;
        let free = self.phase(problem, theta, 0.0, init, c.free_optim, c.free_budget)?;
        match c.variant {
            Variant::Forward => {
                let nudged = self.phase(problem, theta, c.beta, free.phi.clone(), c.nudged_optim, c.nudged_budget)?;
                let delta = contrastive_update(problem, theta, &free, &nudged)?;
                Ok(TaskEstimate {
                    delta,
                    free,
                    second: vec![nudged],
                    fallback: false,
                })
            }
            Variant::Symmetric => {
                let plus = self.phase(problem, theta, c.beta, free.phi.clone(), c.nudged_optim, c.nudged_budget)?;
                let minus = self.phase(problem, theta, -c.beta, free.phi.clone(), c.nudged_optim, c.nudged_budget)?;
                let delta = symmetric_update(problem, theta, &plus, &minus)?;
                Ok(TaskEstimate {
                    delta,
                    free,
                    second: vec![plus, minus],
                    fallback: false,
                })
            }
        }
    }
}
