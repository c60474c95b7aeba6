use serde::{Deserialize, Serialize};

use super::wheel::{random_regret_expectation, wheel_step, WheelTask, N_ACTIONS};
use crate::error::{check_len, Error, Result};
use crate::numkit::{masked_mse, mlp_backward, mlp_forward, Mat, MlpArch, MlpParams, OptimSpec, Rng};
use crate::synapse::DataLoss;

/// One observed pull. `action` is numbered 1 to 5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditRecord {
    pub ctx: [f64; 2],
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditDataset {
    pub learn: Vec<BanditRecord>,
    pub eval: Vec<BanditRecord>,
}

/// Random contexts and uniformly random actions with their noisy rewards.
pub fn bandit_meta_dataset(task: &WheelTask, n_learn: usize, n_eval: usize, rng: &mut Rng) -> Result<BanditDataset> {
    let mut draw = |n: usize| -> Result<Vec<BanditRecord>> {
        (0..n)
            .map(|_| {
                let ctx = WheelTask::sample_context(rng);
                let action = rng.below(N_ACTIONS) + 1;
                let (reward, _) = wheel_step(task, ctx, action, rng)?;
                Ok(BanditRecord { ctx, action, reward })
            })
            .collect()
    };
    let learn = draw(n_learn)?;
    let eval = draw(n_eval)?;
    Ok(BanditDataset { learn, eval })
}

/// Inputs, targets and observation mask for a batch of records.
fn batch(records: &[&BanditRecord]) -> (Mat, Mat, Mat) {
    let n = records.len();
    let mut x = Mat::zeros(n, 2);
    let mut y = Mat::zeros(n, N_ACTIONS);
    let mut m = Mat::zeros(n, N_ACTIONS);
    for (i, r) in records.iter().enumerate() {
        x.row_mut(i).copy_from_slice(&r.ctx);
        y.set(i, r.action - 1, r.reward);
        m.set(i, r.action - 1, 1.0);
    }
    (x, y, m)
}

fn masked_loss(params: &MlpParams, x: &Mat, y: &Mat, m: &Mat, grad: &mut [f64]) -> Result<f64> {
    let (out, cache) = mlp_forward(params, None, x)?;
    let (v, up) = masked_mse(&out, y, m)?;
    let g = mlp_backward(params, &cache, &up)?;
    for (a, b) in grad.iter_mut().zip(g.params.as_slice()) {
        *a += b;
    }
    Ok(v)
}

/// Value-network regression on a bandit dataset: one output per action,
/// squared error only on the pulled action.
#[derive(Debug, Clone)]
pub struct BanditData {
    arch: MlpArch,
    learn: (Mat, Mat, Mat),
    eval: (Mat, Mat, Mat),
}

impl BanditData {
    pub fn new(arch: MlpArch, data: &BanditDataset) -> Result<Self> {
        check_len("value-network input", 2, arch.input_dim())?;
        check_len("value-network output", N_ACTIONS, arch.output_dim())?;
        if data.learn.is_empty() || data.eval.is_empty() {
            return Err(Error::contract("bandit splits must be non-empty"));
        }
        let learn = batch(&data.learn.iter().collect::<Vec<_>>());
        let eval = batch(&data.eval.iter().collect::<Vec<_>>());
        Ok(Self { arch, learn, eval })
    }

    fn params(&self, phi: &[f64]) -> Result<MlpParams> {
        MlpParams::from_flat(self.arch.clone(), phi.to_vec())
    }
}

impl DataLoss for BanditData {
    fn dim(&self) -> usize {
        self.arch.n_params()
    }

    fn learn(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (x, y, m) = &self.learn;
        masked_loss(&self.params(phi)?, x, y, m, grad)
    }

    fn eval(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (x, y, m) = &self.eval;
        masked_loss(&self.params(phi)?, x, y, m, grad)
    }
}

/// Observations gathered during an online episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayBuffer {
    records: Vec<BanditRecord>,
}

impl ReplayBuffer {
    pub fn push(&mut self, r: BanditRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[BanditRecord] {
        &self.records
    }

    /// `k` records drawn uniformly with replacement.
    pub fn sample(&self, k: usize, rng: &mut Rng) -> Vec<&BanditRecord> {
        (0..k).map(|_| &self.records[rng.below(self.records.len())]).collect()
    }
}

/// Per-step regret and the random agent's expected regret on the same contexts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretLedger {
    pub regret: Vec<f64>,
    pub random_regret: Vec<f64>,
    cumulative: f64,
    cumulative_random: f64,
}

impl RegretLedger {
    pub fn push(&mut self, regret: f64, random_regret: f64) {
        self.regret.push(regret);
        self.random_regret.push(random_regret);
        self.cumulative += regret;
        self.cumulative_random += random_regret;
    }

    pub fn len(&self) -> usize {
        self.regret.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regret.is_empty()
    }

    pub fn cumulative(&self) -> f64 {
        self.cumulative
    }

    pub fn cumulative_random(&self) -> f64 {
        self.cumulative_random
    }

    /// Cumulative regret over the random agent's expected cumulative regret.
    pub fn normalized(&self) -> f64 {
        self.cumulative / self.cumulative_random
    }

    /// `(step, normalized regret so far)` every `stride` steps and at the end.
    pub fn normalized_trace(&self, stride: usize) -> Vec<(usize, f64)> {
        let stride = stride.max(1);
        let (mut c, mut cr) = (0.0, 0.0);
        let mut out = Vec::new();
        for (t, (r, rr)) in self.regret.iter().zip(&self.random_regret).enumerate() {
            c += r;
            cr += rr;
            if (t + 1) % stride == 0 || t + 1 == self.len() {
                out.push((t + 1, c / cr));
            }
        }
        out
    }
}

/// A value-based bandit policy that can refit on its replay buffer.
pub trait BanditAgent {
    /// Predicted value of each action at `ctx`.
    fn values(&mut self, ctx: [f64; 2]) -> Result<[f64; N_ACTIONS]>;

    /// Adapts fast parameters for `steps` steps on the buffer.
    fn refit(&mut self, _buffer: &ReplayBuffer, _steps: usize, _rng: &mut Rng) -> Result<()> {
        Ok(())
    }
}

/// Online evaluation schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSchedule {
    /// Initial pulls of every action before acting greedily.
    pub warmup_pulls: usize,
    /// Refit every `refit_every` contexts (`t_f`).
    pub refit_every: usize,
    /// Optimizer steps per refit (`t_s`).
    pub refit_steps: usize,
}

impl Default for OnlineSchedule {
    fn default() -> Self {
        Self {
            warmup_pulls: 2,
            refit_every: 50,
            refit_steps: 250,
        }
    }
}

/// Runs one online episode: warmup pulls, then greedy actions with periodic
/// refits on the replay buffer.
pub fn bandit_online_eval(
    agent: &mut dyn BanditAgent,
    task: &WheelTask,
    horizon: usize,
    schedule: OnlineSchedule,
    rng: &mut Rng,
) -> Result<RegretLedger> {
    let warmup = schedule.warmup_pulls * N_ACTIONS;
    if horizon < warmup.max(1) {
        return Err(Error::contract(format!("horizon {horizon} is shorter than the {warmup}-pull warmup")));
    }
    if schedule.refit_every == 0 {
        return Err(Error::contract("refit interval must be positive"));
    }
    let mut env_rng = rng.child("wheel-online", 0);
    let mut fit_rng = rng.child("wheel-refit", 0);
    let mut buffer = ReplayBuffer::default();
    let mut ledger = RegretLedger::default();
    for t in 0..horizon {
        let ctx = WheelTask::sample_context(&mut env_rng);
        let action = if t < warmup {
            t % N_ACTIONS + 1
        } else {
            let v = agent.values(ctx)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric {
                    context: "bandit value prediction",
                    step: t,
                });
            }
            // first maximum, so ties go to the lower action
            let mut best = 0;
            for a in 1..N_ACTIONS {
                if v[a] > v[best] {
                    best = a;
                }
            }
            best + 1
        };
        let (reward, regret) = wheel_step(task, ctx, action, &mut env_rng)?;
        ledger.push(regret, random_regret_expectation(task, ctx));
        buffer.push(BanditRecord { ctx, action, reward });
        if (t + 1) % schedule.refit_every == 0 && schedule.refit_steps > 0 {
            agent.refit(&buffer, schedule.refit_steps, &mut fit_rng)?;
        }
    }
    Ok(ledger)
}

/// Picks uniformly random actions.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: Rng,
}

impl RandomAgent {
    pub fn new(rng: Rng) -> Self {
        Self { rng }
    }
}

impl BanditAgent for RandomAgent {
    fn values(&mut self, _ctx: [f64; 2]) -> Result<[f64; N_ACTIONS]> {
        let mut v = [0.0; N_ACTIONS];
        v[self.rng.below(N_ACTIONS)] = 1.0;
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynapticAgentCfg {
    /// Attraction strength toward the consolidated weights.
    pub lambda: f64,
    pub optim: OptimSpec,
    /// Replay minibatch size per refit step.
    pub batch_size: usize,
}

/// Value network whose weights are attracted to consolidated values `ω`.
#[derive(Debug, Clone)]
pub struct SynapticAgent {
    params: MlpParams,
    omega: Vec<f64>,
    cfg: SynapticAgentCfg,
}

impl SynapticAgent {
    /// Starts at `φ = ω`.
    pub fn new(arch: MlpArch, omega: Vec<f64>, cfg: SynapticAgentCfg) -> Result<Self> {
        let params = MlpParams::from_flat(arch, omega.clone())?;
        if cfg.batch_size == 0 {
            return Err(Error::contract("replay batch size must be positive"));
        }
        Ok(Self { params, omega, cfg })
    }

    pub fn weights(&self) -> &[f64] {
        self.params.as_slice()
    }
}

impl BanditAgent for SynapticAgent {
    fn values(&mut self, ctx: [f64; 2]) -> Result<[f64; N_ACTIONS]> {
        let out = self.params.predict(&ctx, None)?;
        let mut v = [0.0; N_ACTIONS];
        v.copy_from_slice(&out);
        Ok(v)
    }

    fn refit(&mut self, buffer: &ReplayBuffer, steps: usize, rng: &mut Rng) -> Result<()> {
        if buffer.is_empty() {
            return Ok(());
        }
        let mut opt = self.cfg.optim.build(self.omega.len());
        let mut grad = vec![0.0; self.omega.len()];
        for step in 0..steps {
            let (x, y, m) = batch(&buffer.sample(self.cfg.batch_size, rng));
            grad.iter_mut().for_each(|g| *g = 0.0);
            let v = masked_loss(&self.params, &x, &y, &m, &mut grad)?;
            if !v.is_finite() {
                return Err(Error::Numeric {
                    context: "bandit refit",
                    step,
                });
            }
            for ((g, p), w) in grad.iter_mut().zip(self.params.as_slice()).zip(&self.omega) {
                *g += self.cfg.lambda * (p - w);
            }
            opt.step(self.params.as_mut_slice(), &grad)?;
        }
        Ok(())
    }
}
