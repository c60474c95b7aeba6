use cml::bilevel::{meta_step, FreeInit, MetaState};
use cml::numkit::{kaiming_normal, Rng};
use cml::synapse::{SynapseLayout, SynapseMeta, SynapseProblem};
use cml::tasks::{
    bandit_meta_dataset, bandit_online_eval, BanditData, RandomAgent, SynapticAgent, SynapticAgentCfg, WheelTask,
};

use super::{build_estimator, step_row, Recorder};
use crate::config::{BanditCfg, ExperimentConfig, ExperimentKind};
use crate::output::{Cell, Table};

fn section(cfg: &ExperimentConfig) -> BanditCfg {
    cfg.bandit.clone().unwrap_or_else(|| {
        ExperimentConfig::defaults(ExperimentKind::WheelBandit)
            .bandit
            .expect("bandit defaults")
    })
}

/// Meta-trains consolidation targets of a value network on a pool of
/// offline wheel datasets, then runs the synaptic agent and a random
/// control online on the configured wheel.
pub fn run(cfg: &ExperimentConfig, rec: &mut Recorder) -> cml::Result<()> {
    let b = section(cfg);
    let mut cfg = cfg.clone();
    cfg.bandit = Some(b.clone());
    let arch = cfg
        .bandit_arch()
        .ok_or_else(|| cml::Error::Domain("bandit architecture".into()))?;
    let pool: Vec<BanditData> = (0..b.pool as u64)
        .map(|i| {
            let mut r = Rng::derive(cfg.seed, "bandit-pool", i);
            let task = WheelTask::new(r.uniform(0.0, 1.0))?;
            BanditData::new(arch.clone(), &bandit_meta_dataset(&task, b.n_learn, b.n_eval, &mut r)?)
        })
        .collect::<cml::Result<_>>()?;
    let omega0 = kaiming_normal(&arch, 1.0, &mut Rng::derive(cfg.seed, "bandit-init", 0)).into_vec();
    let est = build_estimator(&cfg, None);
    let mut state = MetaState::new(omega0, cfg.optim.outer);
    let mut pick = Rng::derive(cfg.seed, "bandit-pick", 0);
    for _ in 0..cfg.outer_steps {
        let problems: Vec<_> = (0..cfg.meta_batch)
            .map(|_| {
                let d = &pool[pick.below(pool.len())];
                SynapseProblem::new(d, SynapseLayout::OMEGA, SynapseMeta::uniform(state.theta().to_vec(), b.lambda))
            })
            .collect::<cml::Result<_>>()?;
        let diag = meta_step(&mut state, &problems, &est, &FreeInit::Problem)?;
        rec.metric(step_row(&diag, state.theta()));
    }

    let task = WheelTask::new(b.delta)?;
    let agent_cfg = SynapticAgentCfg {
        lambda: b.lambda,
        optim: b.online,
        batch_size: b.batch_size,
    };
    let mut agent = SynapticAgent::new(arch, state.theta().to_vec(), agent_cfg)?;
    // both agents see the same context and reward streams
    let env = Rng::derive(cfg.seed, "bandit-online", 0);
    let ledger = bandit_online_eval(&mut agent, &task, b.horizon, b.schedule, &mut env.clone())?;
    let mut random = RandomAgent::new(Rng::derive(cfg.seed, "bandit-random", 0));
    let control = bandit_online_eval(&mut random, &task, b.horizon, b.schedule, &mut env.clone())?;

    let trace = ledger.normalized_trace(b.trace_stride);
    let control_trace = control.normalized_trace(b.trace_stride);
    let mut t = Table::new("regret_trace", &["contexts", "normalized_regret", "random_normalized_regret"]);
    for ((step, v), (_, c)) in trace.iter().zip(&control_trace) {
        t.rows.push(vec![Cell::Int(*step as i64), Cell::Num(*v), Cell::Num(*c)]);
    }
    rec.table(t);
    rec.summary("normalized_regret", trace.last().map_or(f64::NAN, |p| p.1));
    rec.summary("random_normalized_regret", control.normalized());
    rec.summary("cumulative_regret", ledger.cumulative());
    rec.summary("horizon", b.horizon);
    Ok(())
}
