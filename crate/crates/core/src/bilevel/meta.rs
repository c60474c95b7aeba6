use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimator::{MetaGradientEstimator, TaskEstimate};
use super::objective::BilevelProblem;
use crate::error::{check_len, Error, Result};
use crate::numkit::{norm, OptimSpec, OptimState};

/// Where each task's free phase starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeInit {
    /// The problem's own choice (`ω` for consolidation models).
    Problem,
    /// A fixed shared initialization.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
struct Polyak {
    start: u64,
    mean: Vec<f64>,
    count: u64,
}

/// Meta-parameters, the outer optimizer and an optional Polyak average.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    theta: Vec<f64>,
    outer: OptimState,
    polyak: Option<Polyak>,
    step: u64,
}

impl MetaState {
    pub fn new(theta: Vec<f64>, outer: OptimSpec) -> Self {
        let outer = outer.build(theta.len());
        Self {
            theta,
            outer,
            polyak: None,
            step: 0,
        }
    }

    /// Average `θ` over every snapshot taken from outer step `start` on.
    pub fn with_polyak(mut self, start: u64) -> Self {
        self.polyak = Some(Polyak {
            start,
            mean: self.theta.clone(),
            count: 0,
        });
        self
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Polyak-averaged `θ`, or `θ` itself before averaging starts.
    pub fn averaged_theta(&self) -> &[f64] {
        match &self.polyak {
            Some(p) if p.count > 0 => &p.mean,
            _ => &self.theta,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDiagnostics {
    pub free_grad_norm: f64,
    pub free_steps: usize,
    pub second_grad_norms: Vec<f64>,
    /// `L_eval` at the free solution.
    pub eval_loss: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchDiagnostics {
    pub step: u64,
    /// Norm of the batch-averaged `Δθ`.
    pub delta_norm: f64,
    pub tasks: Vec<TaskDiagnostics>,
}

impl BatchDiagnostics {
    pub fn mean_eval_loss(&self) -> f64 {
        self.tasks.iter().map(|t| t.eval_loss).sum::<f64>() / self.tasks.len() as f64
    }
}

fn run_task<P: BilevelProblem, E: MetaGradientEstimator>(
    problem: &P,
    theta: &[f64],
    estimator: &E,
    init: &FreeInit,
) -> Result<(TaskEstimate, f64)> {
    let start = match init {
        FreeInit::Problem => problem.initial_fast(theta),
        FreeInit::Fixed(v) => v.clone(),
    };
    check_len("free-phase initialization", problem.fast_dim(), start.len())?;
    let est = estimator.estimate(problem, theta, start)?;
    let mut g = vec![0.0; problem.fast_dim()];
    let eval_loss = problem.eval(theta, &est.free.phi, &mut g)?;
    Ok((est, eval_loss))
}

/// One outer update over a batch of tasks.
///
/// Tasks are solved independently against the same `θ` snapshot (in
/// parallel when a thread pool is available); their `Δθ` are averaged in
/// task order, and the outer optimizer consumes `−Δθ` as the gradient.
pub fn meta_step<P: BilevelProblem, E: MetaGradientEstimator>(
    state: &mut MetaState,
    batch: &[P],
    estimator: &E,
    init: &FreeInit,
) -> Result<BatchDiagnostics> {
    if batch.is_empty() {
        return Err(Error::contract("meta-step needs at least one task"));
    }
    let theta = state.theta.clone();
    let results: Vec<Result<(TaskEstimate, f64)>> = batch
        .par_iter()
        .map(|p| run_task(p, &theta, estimator, init))
        .collect();

    let mut sum = vec![0.0; theta.len()];
    let mut tasks = Vec::with_capacity(batch.len());
    for (i, r) in results.into_iter().enumerate() {
        let (est, eval_loss) = r.map_err(|e| Error::Task {
            task: i,
            source: Box::new(e),
        })?;
        check_len("Δθ", theta.len(), est.delta.len())?;
        for (s, d) in sum.iter_mut().zip(&est.delta) {
            *s += d;
        }
        tasks.push(TaskDiagnostics {
            free_grad_norm: est.free.grad_norm,
            free_steps: est.free.steps,
            second_grad_norms: est.second.iter().map(|p| p.grad_norm).collect(),
            eval_loss,
            fallback: est.fallback,
        });
    }
    let n = batch.len() as f64;
    let grad: Vec<f64> = sum.iter().map(|s| -s / n).collect();
    state.outer.step(&mut state.theta, &grad)?;
    batch[0].project_meta(&mut state.theta);
    state.step += 1;
    if let Some(p) = state.polyak.as_mut() {
        if state.step >= p.start {
            p.count += 1;
            let k = p.count as f64;
            for (m, t) in p.mean.iter_mut().zip(&state.theta) {
                *m += (t - *m) / k;
            }
        } else {
            p.mean.copy_from_slice(&state.theta);
        }
    }
    Ok(BatchDiagnostics {
        step: state.step,
        delta_norm: norm(&grad),
        tasks,
    })
}
