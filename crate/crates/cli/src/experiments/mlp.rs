use cml::bilevel::{meta_step, solve_phase, AugmentedObjective, BilevelProblem, FreeInit, MetaState};
use cml::numkit::{kaiming_normal, stats, Activation, MlpArch, Rng};
use cml::synapse::{ModulationProblem, SynapseLayout, SynapseMeta, SynapseProblem};
use cml::tasks::{sinusoid_sample, MlpRegression};
use rayon::prelude::*;

use super::{budget, build_estimator, curve_summary, is_checkpoint, step_row, Recorder};
use crate::config::{ExperimentConfig, ExperimentKind, MlpCfg, MlpModel};

fn section(cfg: &ExperimentConfig) -> MlpCfg {
    cfg.mlp.clone().unwrap_or_else(|| {
        ExperimentConfig::defaults(ExperimentKind::SinusoidMlp)
            .mlp
            .expect("mlp defaults")
    })
}

enum Problem {
    Synapse(SynapseProblem<MlpRegression>),
    Modulation(ModulationProblem),
}

struct Setup {
    m: MlpCfg,
    arch: MlpArch,
    init: Vec<f64>,
}

impl Setup {
    fn problem(&self, seed: u64, stream: &str, i: u64, theta: &[f64], lambda: f64) -> cml::Result<Problem> {
        let task = sinusoid_sample(&mut Rng::derive(seed, stream, i));
        let data = task.regression_data();
        Ok(match self.m.model {
            MlpModel::Synapse => Problem::Synapse(SynapseProblem::new(
                MlpRegression::new(self.arch.clone(), data)?,
                SynapseLayout::OMEGA,
                SynapseMeta::uniform(theta.to_vec(), lambda),
            )?),
            MlpModel::Modulation => {
                let out = self.arch.layer_offset(self.arch.n_layers() - 1);
                Problem::Modulation(ModulationProblem::new(self.arch.clone(), data, self.init[out..].to_vec())?)
            }
        })
    }

    fn initial_theta(&self) -> Vec<f64> {
        match self.m.model {
            MlpModel::Synapse => self.init.clone(),
            MlpModel::Modulation => self.init[..self.arch.layer_offset(self.arch.n_layers() - 1)].to_vec(),
        }
    }
}

fn learn_then_eval<P: BilevelProblem>(p: &P, cfg: &ExperimentConfig, theta: &[f64]) -> cml::Result<f64> {
    let obj = AugmentedObjective::new(p, theta, 0.0);
    let r = solve_phase(&obj, p.initial_fast(theta), cfg.optim.inner, budget(cfg.free))?;
    let mut g = vec![0.0; p.fast_dim()];
    p.eval(theta, &r.phi, &mut g)
}

/// Sinusoid regression with a rate-based MLP under either meta-learning model.
pub fn run(cfg: &ExperimentConfig, rec: &mut Recorder) -> cml::Result<()> {
    let m = section(cfg);
    let mut widths = vec![1];
    widths.extend(&m.hidden);
    widths.push(1);
    let arch = MlpArch::with_hidden(&widths, Activation::Relu, Activation::Linear)?;
    let init = kaiming_normal(&arch, 1.0, &mut Rng::derive(cfg.seed, "mlp-init", 0)).into_vec();
    let setup = Setup { m, arch, init };
    let lambda = setup.m.lambda;

    let evaluate = |theta: &[f64], lambda: f64| -> cml::Result<f64> {
        let mses: Vec<f64> = (0..setup.m.eval_tasks as u64)
            .into_par_iter()
            .map(|i| match setup.problem(cfg.seed, "mlp-heldout", i, theta, lambda)? {
                Problem::Synapse(p) => learn_then_eval(&p, cfg, theta),
                Problem::Modulation(p) => learn_then_eval(&p, cfg, theta),
            })
            .collect::<cml::Result<_>>()?;
        Ok(stats::median(&mses))
    };

    let theta0 = setup.initial_theta();
    let baseline = evaluate(&theta0, 0.0)?;
    rec.summary("baseline_mse", baseline);
    let est = build_estimator(cfg, None);
    let mut state = MetaState::new(theta0.clone(), cfg.optim.outer);
    let mut steps = vec![0];
    let mut curve = vec![evaluate(&theta0, lambda)?];
    let mb = cfg.meta_batch as u64;
    for s in 0..cfg.outer_steps {
        let theta = state.theta().to_vec();
        let idx = |i: u64| s as u64 * mb + i;
        let diag = match setup.m.model {
            MlpModel::Synapse => {
                let batch: Vec<_> = (0..mb)
                    .map(|i| match setup.problem(cfg.seed, "mlp-train", idx(i), &theta, lambda)? {
                        Problem::Synapse(p) => Ok(p),
                        Problem::Modulation(_) => unreachable!("model fixed by configuration"),
                    })
                    .collect::<cml::Result<_>>()?;
                meta_step(&mut state, &batch, &est, &FreeInit::Problem)?
            }
            MlpModel::Modulation => {
                let batch: Vec<_> = (0..mb)
                    .map(|i| match setup.problem(cfg.seed, "mlp-train", idx(i), &theta, lambda)? {
                        Problem::Modulation(p) => Ok(p),
                        Problem::Synapse(_) => unreachable!("model fixed by configuration"),
                    })
                    .collect::<cml::Result<_>>()?;
                meta_step(&mut state, &batch, &est, &FreeInit::Problem)?
            }
        };
        let mut row = step_row(&diag, state.theta());
        if is_checkpoint(s + 1, setup.m.eval_every, cfg.outer_steps) {
            let v = evaluate(state.theta(), lambda)?;
            row.push(("heldout_median_mse".into(), v.into()));
            steps.push(s + 1);
            curve.push(v);
            curve_summary(rec, baseline, &steps, &curve);
        }
        rec.metric(row);
    }
    curve_summary(rec, baseline, &steps, &curve);
    Ok(())
}
