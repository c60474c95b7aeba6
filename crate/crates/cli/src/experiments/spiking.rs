use cml::bilevel::{meta_step, solve_phase, AugmentedObjective, FreeInit, MetaState};
use cml::numkit::{stats, Rng};
use cml::spiking::{LifParams, LifShape, SpikingData};
use cml::synapse::{DataLoss, SynapseLayout, SynapseMeta, SynapseProblem};
use cml::tasks::sinusoid_sample;
use rayon::prelude::*;

use super::{budget, build_estimator, curve_summary, is_checkpoint, step_row, Recorder};
use crate::config::{ExperimentConfig, ExperimentKind, SpikingCfg};

fn section(cfg: &ExperimentConfig) -> SpikingCfg {
    cfg.spiking.clone().unwrap_or_else(|| {
        ExperimentConfig::defaults(ExperimentKind::SinusoidSpiking)
            .spiking
            .expect("spiking defaults")
    })
}

struct Setup {
    s: SpikingCfg,
    template: LifParams,
    held_out: Vec<SpikingData>,
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> cml::Result<Self> {
        let s = section(cfg);
        let shape = LifShape {
            inputs: s.encoder.neurons,
            hidden: s.hidden,
            outputs: 1,
        };
        let template = LifParams::kaiming(shape, &mut Rng::derive(cfg.seed, "spiking-init", 0));
        let mut me = Self {
            s,
            template,
            held_out: Vec::new(),
        };
        me.held_out = (0..me.s.eval_tasks as u64)
            .map(|i| me.task(cfg.seed, "spiking-heldout", i))
            .collect::<cml::Result<_>>()?;
        Ok(me)
    }

    fn task(&self, seed: u64, stream: &str, i: u64) -> cml::Result<SpikingData> {
        let mut r = Rng::derive(seed, stream, i);
        let t = sinusoid_sample(&mut r);
        SpikingData::sinusoid(&t, &self.s.encoder, self.template.clone(), self.s.eprop, &mut r)
    }

    /// Median held-out eval MSE after learning from `omega` with strength `lambda`.
    fn evaluate(&self, cfg: &ExperimentConfig, omega: &[f64], lambda: f64) -> cml::Result<f64> {
        let mses: Vec<f64> = self
            .held_out
            .par_iter()
            .map(|d| {
                let p = SynapseProblem::new(d, SynapseLayout::OMEGA, SynapseMeta::uniform(omega.to_vec(), lambda))?;
                let theta = p.initial_theta();
                let obj = AugmentedObjective::new(&p, &theta, 0.0);
                let r = solve_phase(&obj, omega.to_vec(), cfg.optim.inner, budget(cfg.free))?;
                let mut g = vec![0.0; d.dim()];
                d.eval(&r.phi, &mut g)
            })
            .collect::<cml::Result<_>>()?;
        Ok(stats::median(&mses))
    }
}

/// Meta-trains consolidation targets `ω` of a spiking network learning
/// with e-prop. The baseline learns from the initial weights with no
/// consolidation; checkpoints learn from the current `ω` with it.
pub fn run(cfg: &ExperimentConfig, rec: &mut Recorder) -> cml::Result<()> {
    let setup = Setup::new(cfg)?;
    let lambda = setup.s.lambda;
    let omega0 = setup.template.to_flat();
    let baseline = setup.evaluate(cfg, &omega0, 0.0)?;
    rec.summary("baseline_mse", baseline);
    let est = build_estimator(cfg, None);
    let mut state = MetaState::new(omega0.clone(), cfg.optim.outer);
    let mut steps = vec![0];
    let mut curve = vec![setup.evaluate(cfg, &omega0, lambda)?];
    let mb = cfg.meta_batch;
    for s in 0..cfg.outer_steps {
        let batch: Vec<SpikingData> = (0..mb)
            .map(|i| setup.task(cfg.seed, "spiking-train", (s * mb + i) as u64))
            .collect::<cml::Result<_>>()?;
        let problems: Vec<_> = batch
            .iter()
            .map(|d| SynapseProblem::new(d, SynapseLayout::OMEGA, SynapseMeta::uniform(state.theta().to_vec(), lambda)))
            .collect::<cml::Result<_>>()?;
        let diag = meta_step(&mut state, &problems, &est, &FreeInit::Problem)?;
        let mut row = step_row(&diag, state.theta());
        if is_checkpoint(s + 1, setup.s.eval_every, cfg.outer_steps) {
            let m = setup.evaluate(cfg, state.theta(), lambda)?;
            row.push(("heldout_median_mse".into(), m.into()));
            steps.push(s + 1);
            curve.push(m);
            curve_summary(rec, baseline, &steps, &curve);
        }
        rec.metric(row);
    }
    curve_summary(rec, baseline, &steps, &curve);
    Ok(())
}
