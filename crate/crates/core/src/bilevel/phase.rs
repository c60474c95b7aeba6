use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::objective::{AugmentedObjective, BilevelProblem};
use crate::error::{Error, Result};
use crate::numkit::{max_abs, norm, OptimSpec};

/// Stopping rule of one phase: a step cap and a gradient-norm tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseBudget {
    pub max_steps: usize,
    #[serde(default)]
    pub grad_tol: f64,
}

impl PhaseBudget {
    pub fn steps(max_steps: usize) -> Self {
        Self {
            max_steps,
            grad_tol: 0.0,
        }
    }
}

/// Approximate minimizer of one phase with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResult {
    pub phi: Vec<f64>,
    pub beta: f64,
    pub steps: usize,
    /// Norm of the `φ`-gradient measured at `phi`.
    pub grad_norm: f64,
    pub value: f64,
}

/// Runs a first-order optimizer on the augmented objective from `init`.
pub fn solve_phase<P: BilevelProblem + ?Sized>(
    obj: &AugmentedObjective<'_, P>,
    init: Vec<f64>,
    optimizer: OptimSpec,
    budget: PhaseBudget,
) -> Result<PhaseResult> {
    if budget.max_steps == 0 {
        return Err(Error::contract("phase budget needs max_steps >= 1"));
    }
    let mut phi = init;
    let mut opt = optimizer.build(phi.len());
    if let Some(scale) = obj.problem.lr_scale() {
        opt = opt.with_lr_scale(scale);
    }
    let mut steps = 0;
    loop {
        let (value, grad) = obj.eval(&phi)?;
        let grad_norm = norm(&grad);
        if !value.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Numeric {
                context: "phase objective",
                step: steps,
            });
        }
        if steps == budget.max_steps || grad_norm <= budget.grad_tol {
            return Ok(PhaseResult {
                phi,
                beta: obj.beta,
                steps,
                grad_norm,
                value,
            });
        }
        opt.step(&mut phi, &grad)?;
        steps += 1;
    }
}

/// Damped Newton refinement of a phase solution.
///
/// The Hessian is assembled from central differences of the exact gradient,
/// so this is meant for small problems that need solutions far tighter than
/// first-order methods reach in reasonable time.
pub fn polish_newton<P: BilevelProblem + ?Sized>(
    obj: &AugmentedObjective<'_, P>,
    start: PhaseResult,
    budget: PhaseBudget,
) -> Result<PhaseResult> {
    let n = start.phi.len();
    let mut phi = start.phi;
    let (mut value, mut grad) = obj.eval(&phi)?;
    let mut gnorm = norm(&grad);
    let mut steps = start.steps;
    let mut damping = 0.0_f64;
    for _ in 0..budget.max_steps {
        if gnorm <= budget.grad_tol {
            break;
        }
        let h = 1e-5 * (1.0 + max_abs(&phi));
        let mut hess = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut up = phi.clone();
            let mut dn = phi.clone();
            up[j] += h;
            dn[j] -= h;
            let (_, gu) = obj.eval(&up)?;
            let (_, gd) = obj.eval(&dn)?;
            for i in 0..n {
                hess[(i, j)] = (gu[i] - gd[i]) / (2.0 * h);
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let g = DVector::from_column_slice(&grad);
        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = hess.clone();
            for i in 0..n {
                damped[(i, i)] += damping;
            }
            let Some(chol) = damped.cholesky() else {
                damping = (damping * 10.0).max(1e-8);
                continue;
            };
            let step = chol.solve(&g);
            let cand: Vec<f64> = phi.iter().zip(step.iter()).map(|(p, s)| p - s).collect();
            let (cv, cg) = obj.eval(&cand)?;
            let cn = norm(&cg);
            if cv.is_finite() && cn.is_finite() && cn < gnorm {
                phi = cand;
                value = cv;
                grad = cg;
                gnorm = cn;
                damping *= 0.1;
                if damping < 1e-12 {
                    damping = 0.0;
                }
                accepted = true;
                break;
            }
            damping = (damping * 10.0).max(1e-8);
        }
        steps += 1;
        if !accepted {
            break;
        }
    }
    Ok(PhaseResult {
        phi,
        beta: obj.beta,
        steps,
        grad_norm: gnorm,
        value,
    })
}
