//! Experiment orchestration. Each runner streams metrics into a
//! [`Recorder`], so a failure part-way keeps everything produced so far.

mod bandit;
mod mlp;
mod quad;
mod ridge;
mod spiking;

use std::time::Instant;

use cml::bilevel::{
    BilevelProblem, ContrastiveConfig, ContrastiveEstimator, MetaGradientEstimator, PhaseBudget, TaskEstimate, Variant,
};
use cml::implicit::{HvpScheme, ImplicitEstimator, MuSolver, MuSolverCfg};
use cml::numkit::stats;

use crate::config::{EstimatorKind, ExperimentConfig, ExperimentKind, PhaseCfg};
use crate::output::{Cell, Row, RunRecord, Table};

pub use quad::curve_table;
pub use ridge::{ridge_fd_check, FdCheck, FdReport};

/// Accumulates a run's outputs as they are produced.
#[derive(Debug)]
pub struct Recorder {
    metrics: Vec<Row>,
    timings: Vec<f64>,
    tables: Vec<Table>,
    summary: Row,
    last: Instant,
}

impl Default for Recorder {
    fn default() -> Self {
        Self {
            metrics: Vec::new(),
            timings: Vec::new(),
            tables: Vec::new(),
            summary: Vec::new(),
            last: Instant::now(),
        }
    }
}

impl Recorder {
    /// Appends a metrics line; its wall time is the time since the previous one.
    pub fn metric(&mut self, row: Row) {
        let now = Instant::now();
        self.timings.push(now.duration_since(self.last).as_secs_f64());
        self.last = now;
        self.metrics.push(row);
    }

    pub fn table(&mut self, t: Table) {
        self.tables.retain(|o| o.name != t.name);
        self.tables.push(t);
    }

    pub fn summary(&mut self, key: &str, v: impl Into<Cell>) {
        let v = v.into();
        match self.summary.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = v,
            None => self.summary.push((key.to_string(), v)),
        }
    }
}

/// Runs the configured experiment. `config_text` is echoed verbatim.
pub fn run(config_text: &str, cfg: &ExperimentConfig) -> RunRecord {
    let mut rec = Recorder::default();
    rec.summary("experiment", cfg.experiment.name());
    rec.summary("seed", cfg.seed);
    let result = match cfg.experiment {
        ExperimentKind::QuadVerify => quad::run(cfg, &mut rec),
        ExperimentKind::RidgeHyperopt => ridge::run(cfg, &mut rec),
        ExperimentKind::SinusoidSpiking => spiking::run(cfg, &mut rec),
        ExperimentKind::SinusoidMlp => mlp::run(cfg, &mut rec),
        ExperimentKind::WheelBandit => bandit::run(cfg, &mut rec),
    };
    RunRecord {
        version: cml::VERSION.to_string(),
        config_echo: config_text.to_string(),
        metrics: rec.metrics,
        timings: rec.timings,
        tables: rec.tables,
        summary: rec.summary,
        error: result.err().map(|e| e.to_string()),
    }
}

/// Contrastive or implicit meta-gradient estimation, chosen by configuration.
#[derive(Debug, Clone)]
pub enum AnyEstimator {
    Contrastive(ContrastiveEstimator),
    Implicit(ImplicitEstimator),
}

impl MetaGradientEstimator for AnyEstimator {
    fn estimate<P: BilevelProblem>(&self, problem: &P, theta: &[f64], init: Vec<f64>) -> cml::Result<TaskEstimate> {
        match self {
            Self::Contrastive(e) => e.estimate(problem, theta, init),
            Self::Implicit(e) => e.estimate(problem, theta, init),
        }
    }
}

pub(crate) fn budget(p: PhaseCfg) -> PhaseBudget {
    PhaseBudget {
        max_steps: p.steps,
        grad_tol: p.tol,
    }
}

/// The configured estimator, with optional Newton refinement of every phase.
pub fn build_estimator(cfg: &ExperimentConfig, polish: Option<PhaseBudget>) -> AnyEstimator {
    let variant = match cfg.estimator {
        EstimatorKind::Forward => Some(Variant::Forward),
        EstimatorKind::Symmetric => Some(Variant::Symmetric),
        _ => None,
    };
    if let Some(variant) = variant {
        return AnyEstimator::Contrastive(ContrastiveEstimator::new(ContrastiveConfig {
            variant,
            beta: cfg.beta,
            free_budget: budget(cfg.free),
            nudged_budget: budget(cfg.nudged),
            free_optim: cfg.optim.inner,
            nudged_optim: cfg.optim.nudged,
            newton_polish: polish,
        }));
    }
    let solver = match cfg.estimator {
        EstimatorKind::Neumann => MuSolver::Neumann {
            alpha: None,
            iterations: cfg.solver_iterations,
        },
        EstimatorKind::Cg => MuSolver::Cg {
            iterations: cfg.solver_iterations,
        },
        _ => MuSolver::Identity,
    };
    AnyEstimator::Implicit(ImplicitEstimator {
        solver: MuSolverCfg {
            solver,
            hvp: HvpScheme::FiniteDifference { step: None },
        },
        free_budget: budget(cfg.free),
        free_optim: cfg.optim.inner,
        newton_polish: polish,
    })
}

/// Per-outer-step metrics shared by the meta-training runners.
pub(crate) fn step_row(diag: &cml::bilevel::BatchDiagnostics, theta: &[f64]) -> Row {
    let free: Vec<f64> = diag.tasks.iter().map(|t| t.free_grad_norm).collect();
    let second: Vec<f64> = diag.tasks.iter().flat_map(|t| t.second_grad_norms.iter().copied()).collect();
    let fallbacks = diag.tasks.iter().filter(|t| t.fallback).count();
    let mut row = vec![
        ("step".to_string(), Cell::Int(diag.step as i64)),
        ("eval_loss".to_string(), Cell::Num(diag.mean_eval_loss())),
        ("delta_norm".to_string(), Cell::Num(diag.delta_norm)),
        ("free_grad_norm".to_string(), Cell::Num(stats::mean(&free))),
    ];
    if !second.is_empty() {
        row.push(("nudged_grad_norm".to_string(), Cell::Num(stats::mean(&second))));
    }
    row.push(("fallbacks".to_string(), Cell::Int(fallbacks as i64)));
    row.push(("theta_norm".to_string(), Cell::Num(cml::numkit::norm(theta))));
    row
}

/// Whether `step` (1-based) is an evaluation checkpoint.
pub(crate) fn is_checkpoint(step: usize, every: usize, last: usize) -> bool {
    step % every == 0 || step == last
}

/// Median learning-curve summary: first, final, ratio to a baseline and the
/// rank correlation of the checkpoint curve with the step index.
pub(crate) fn curve_summary(rec: &mut Recorder, baseline: f64, steps: &[usize], curve: &[f64]) {
    rec.summary("baseline_mse", baseline);
    if let Some(&last) = curve.last() {
        rec.summary("final_mse", last);
        rec.summary("ratio_to_baseline", last / baseline);
    }
    if curve.len() >= 2 {
        let xs: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
        rec.summary("spearman_rho", stats::spearman(&xs, curve));
    }
    let mut t = Table::new("checkpoints", &["step", "median_mse"]);
    for (s, m) in steps.iter().zip(curve) {
        t.rows.push(vec![Cell::Int(*s as i64), Cell::Num(*m)]);
    }
    rec.table(t);
}
