use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quad::{quad_meta_gradient, quad_solution, QuadModel};
use crate::bilevel::{
    contrastive_update, solve_phase, symmetric_update, AugmentedObjective, PhaseBudget, PhaseResult, Variant,
};
use crate::error::{Error, Result};
use crate::numkit::{norm, OptimSpec};

/// Grid of an error-curve experiment on a quadratic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub betas: Vec<f64>,
    /// Gradient-descent steps per phase; `None` uses exact solutions.
    pub budgets: Vec<Option<usize>>,
    pub variant: Variant,
}

/// One `(β, budget)` cell of an error curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub beta: f64,
    pub steps: Option<usize>,
    /// `‖∇ − (−Δθ)‖ / ‖∇‖`.
    pub error: f64,
    pub free_grad_norm: f64,
    /// Largest gradient norm over the nudged phases.
    pub nudged_grad_norm: f64,
    /// Distance proxies `‖grad‖/μ` for the free and nudged solutions.
    pub delta: f64,
    pub delta_nudged: f64,
}

/// Strong-convexity modulus of the phase objective at `β`.
fn modulus(m: &QuadModel, beta: f64) -> f64 {
    let (lo, hi) = m.curvature_range();
    let c = if beta >= -1.0 { lo } else { hi };
    (1.0 + beta) * c + m.lambda
}

fn phase(m: &QuadModel, beta: f64, init: Vec<f64>, steps: Option<usize>) -> Result<PhaseResult> {
    let problem = m.problem();
    let theta = m.omega.clone();
    let obj = AugmentedObjective::new(&problem, &theta, beta);
    match steps {
        None => {
            let phi = quad_solution(m, beta)?;
            let (value, grad) = obj.eval(&phi)?;
            Ok(PhaseResult {
                phi,
                beta,
                steps: 0,
                grad_norm: norm(&grad),
                value,
            })
        }
        Some(k) => {
            let (_, hi) = m.curvature_range();
            let lr = 1.0 / ((1.0 + beta.abs()) * hi + m.lambda);
            solve_phase(&obj, init, OptimSpec::gd(lr), PhaseBudget::steps(k))
        }
    }
}

fn cell(m: &QuadModel, grad: &[f64], beta: f64, steps: Option<usize>, variant: Variant) -> Result<CurveRow> {
    let problem = m.problem();
    let theta = m.omega.clone();
    let free = phase(m, 0.0, m.omega.clone(), steps)?;
    let (delta, nudged) = match variant {
        Variant::Forward => {
            let nb = phase(m, beta, free.phi.clone(), steps)?;
            (contrastive_update(&problem, &theta, &free, &nb)?, vec![nb])
        }
        Variant::Symmetric => {
            let plus = phase(m, beta, free.phi.clone(), steps)?;
            let minus = phase(m, -beta, free.phi.clone(), steps)?;
            (symmetric_update(&problem, &theta, &plus, &minus)?, vec![plus, minus])
        }
    };
    let diff: Vec<f64> = grad.iter().zip(&delta).map(|(g, d)| g + d).collect();
    let nudged_grad_norm = nudged.iter().map(|p| p.grad_norm).fold(0.0, f64::max);
    let delta_nudged = nudged
        .iter()
        .map(|p| p.grad_norm / modulus(m, p.beta))
        .fold(0.0, f64::max);
    Ok(CurveRow {
        beta,
        steps,
        error: norm(&diff) / norm(grad),
        free_grad_norm: free.grad_norm,
        nudged_grad_norm,
        delta: free.grad_norm / modulus(m, 0.0),
        delta_nudged,
    })
}

/// Normalized estimation error over a `(budget, β)` grid, budget-major.
///
/// Cells run concurrently; rows come back in grid order.
pub fn error_curve(m: &QuadModel, spec: &CurveSpec) -> Result<Vec<CurveRow>> {
    let grad = quad_meta_gradient(m);
    if norm(&grad) == 0.0 {
        return Err(Error::Domain("meta-gradient is zero; normalized error undefined".into()));
    }
    let cells: Vec<(Option<usize>, f64)> = spec
        .budgets
        .iter()
        .flat_map(|&s| spec.betas.iter().map(move |&b| (s, b)))
        .collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(i, &(steps, beta))| {
            cell(m, &grad, beta, steps, spec.variant).map_err(|e| Error::Task {
                task: i,
                source: Box::new(e),
            })
        })
        .collect()
}
