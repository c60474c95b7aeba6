use cml::bilevel::{
    meta_step, polish_newton, solve_phase, AugmentedObjective, BilevelProblem, FreeInit, MetaGradientEstimator,
    MetaState, PhaseBudget, PhaseResult,
};
use cml::numkit::{kaiming_normal, Activation, MlpArch, OptimSpec, Rng};
use cml::synapse::{SynapseLayout, SynapseMeta, SynapseProblem};
use cml::tasks::{ridge_build, MlpRegression, RidgeSource, SyntheticSpec};

use super::{budget, build_estimator, step_row, Recorder};
use crate::config::{ExperimentConfig, ExperimentKind, RidgeCfg};
use crate::output::{Cell, Table};

const POLISH_STEPS: usize = 50;

/// A ridge task with per-weight attraction strengths as `θ`.
pub struct RidgeSetup {
    pub problem: SynapseProblem<MlpRegression>,
    /// Shared free-phase start.
    pub init: Vec<f64>,
    pub polish: Option<PhaseBudget>,
}

fn section(cfg: &ExperimentConfig) -> RidgeCfg {
    cfg.ridge.clone().unwrap_or_else(|| {
        ExperimentConfig::defaults(ExperimentKind::RidgeHyperopt)
            .ridge
            .expect("ridge defaults")
    })
}

pub fn setup(cfg: &ExperimentConfig) -> cml::Result<RidgeSetup> {
    let r = section(cfg);
    let source = match &r.csv {
        Some(path) => RidgeSource::Csv {
            text: std::fs::read_to_string(path)
                .map_err(|e| cml::Error::Domain(format!("cannot read `{path}`: {e}")))?,
            header: r.header,
        },
        None => RidgeSource::Synthetic(SyntheticSpec {
            rows: r.rows,
            features: r.features,
            noise: r.noise,
        }),
    };
    let task = ridge_build(&source, &mut Rng::derive(cfg.seed, "ridge-data", 0))?;
    let arch = MlpArch::with_hidden(&[task.n_features(), r.hidden, 1], Activation::Tanh, Activation::Linear)?;
    let mut prior = kaiming_normal(&arch, 1.0, &mut Rng::derive(cfg.seed, "ridge-prior", 0)).into_vec();
    prior.iter_mut().for_each(|w| *w *= r.prior_scale);
    let init = kaiming_normal(&arch, 1.0, &mut Rng::derive(cfg.seed, "ridge-init", 0)).into_vec();
    let data = MlpRegression::new(arch, task.regression_data())?;
    let problem = SynapseProblem::new(data, SynapseLayout::LAMBDA, SynapseMeta::uniform(prior, r.lambda_init))?
        .with_lambda_min(1e-8);
    Ok(RidgeSetup {
        problem,
        init,
        polish: r.polish_tol.map(|grad_tol| PhaseBudget {
            max_steps: POLISH_STEPS,
            grad_tol,
        }),
    })
}

pub fn run(cfg: &ExperimentConfig, rec: &mut Recorder) -> cml::Result<()> {
    let s = setup(cfg)?;
    let est = build_estimator(cfg, s.polish);
    let init = FreeInit::Fixed(s.init.clone());
    let mut state = MetaState::new(s.problem.initial_theta(), cfg.optim.outer);
    let mut trace = Table::new("trace", &["step", "eval_loss", "delta_norm", "mean_lambda"]);
    let batch = std::slice::from_ref(&s.problem);
    for _ in 0..cfg.outer_steps {
        let diag = meta_step(&mut state, batch, &est, &init)?;
        let theta = state.theta();
        let mean_lambda = cml::numkit::stats::mean(theta);
        let mut row = step_row(&diag, theta);
        row.push(("mean_lambda".into(), Cell::Num(mean_lambda)));
        rec.metric(row);
        trace.rows.push(vec![
            Cell::Int(diag.step as i64),
            Cell::Num(diag.mean_eval_loss()),
            Cell::Num(diag.delta_norm),
            Cell::Num(mean_lambda),
        ]);
    }
    // held-out loss after learning with the final strengths
    let theta = state.theta().to_vec();
    let free = est.estimate(&s.problem, &theta, s.init.clone())?.free;
    let mut g = vec![0.0; s.problem.fast_dim()];
    rec.summary("final_eval_loss", s.problem.eval(&theta, &free.phi, &mut g)?);
    rec.summary("final_mean_lambda", cml::numkit::stats::mean(&theta));
    rec.table(trace);
    Ok(())
}

/// One coordinate of a finite-difference meta-gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdCheck {
    pub coord: usize,
    /// `−Δθ_k` from the contrastive estimate.
    pub estimate: f64,
    pub finite_difference: f64,
}

/// Finite-difference comparison with the precision the phases reached.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub checks: Vec<FdCheck>,
    pub free_grad_norm: f64,
    pub nudged_grad_norm: f64,
}

impl FdCheck {
    pub fn rel_error(&self) -> f64 {
        (self.estimate - self.finite_difference).abs() / self.finite_difference.abs()
    }
}

/// Compares the forward contrastive estimate with a central finite
/// difference of the post-learning eval loss on `coords` random coordinates
/// of `θ`. Strengths are spread by a random factor in `[0.5, 2]` first so
/// coordinates differ. Every re-solve is a Newton refinement from the free
/// solution, so all evaluations track the same local minimum.
pub fn ridge_fd_check(cfg: &ExperimentConfig, coords: usize, rel_step: f64) -> cml::Result<FdReport> {
    let s = setup(cfg)?;
    let polish = s.polish.unwrap_or(PhaseBudget {
        max_steps: POLISH_STEPS,
        grad_tol: 1e-11,
    });
    let p = &s.problem;
    let mut rng = Rng::derive(cfg.seed, "ridge-fd", 0);
    let mut theta = p.initial_theta();
    theta.iter_mut().for_each(|t| *t *= rng.uniform(0.5, 2.0));

    let solve = |th: &[f64], beta: f64, init: Vec<f64>, optim: OptimSpec, b: PhaseBudget| -> cml::Result<PhaseResult> {
        let obj = AugmentedObjective::new(p, th, beta);
        let r = solve_phase(&obj, init, optim, b)?;
        polish_newton(&obj, r, polish)
    };
    let free = solve(&theta, 0.0, s.init.clone(), cfg.optim.inner, budget(cfg.free))?;
    let nudged = solve(&theta, cfg.beta, free.phi.clone(), cfg.optim.nudged, budget(cfg.nudged))?;
    let delta = cml::bilevel::contrastive_update(p, &theta, &free, &nudged)?;
    // no first-order steps; Newton alone from the free solution
    let refine = PhaseBudget {
        max_steps: 1,
        grad_tol: f64::INFINITY,
    };
    let mut out = Vec::with_capacity(coords);
    let mut g = vec![0.0; p.fast_dim()];
    for _ in 0..coords {
        let k = rng.below(theta.len());
        let eps = rel_step * theta[k];
        let mut e = [0.0; 2];
        for (slot, sign) in e.iter_mut().zip([1.0, -1.0]) {
            let mut th = theta.clone();
            th[k] += sign * eps;
            let r = solve(&th, 0.0, free.phi.clone(), cfg.optim.inner, refine)?;
            *slot = p.eval(&th, &r.phi, &mut g)?;
        }
        out.push(FdCheck {
            coord: k,
            estimate: -delta[k],
            finite_difference: (e[0] - e[1]) / (2.0 * eps),
        });
    }
    Ok(FdReport {
        checks: out,
        free_grad_norm: free.grad_norm,
        nudged_grad_norm: nudged.grad_norm,
    })
}
