//! Experiment configuration: one JSON object, defaults filled per
//! experiment kind, every problem reported at once.

use std::fmt;

use cml::numkit::{MlpArch, OptimSpec};
use cml::spiking::{EpropCfg, PoissonEncoder, PseudoDerivative};
use cml::tasks::OnlineSchedule;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    QuadVerify,
    RidgeHyperopt,
    SinusoidSpiking,
    SinusoidMlp,
    WheelBandit,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        Self::QuadVerify,
        Self::RidgeHyperopt,
        Self::SinusoidSpiking,
        Self::SinusoidMlp,
        Self::WheelBandit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::QuadVerify => "quad-verify",
            Self::RidgeHyperopt => "ridge-hyperopt",
            Self::SinusoidSpiking => "sinusoid-spiking",
            Self::SinusoidMlp => "sinusoid-mlp",
            Self::WheelBandit => "wheel-bandit",
        }
    }

    /// Key of the experiment-specific section.
    pub fn section(self) -> &'static str {
        match self {
            Self::QuadVerify => "quad",
            Self::RidgeHyperopt => "ridge",
            Self::SinusoidSpiking => "spiking",
            Self::SinusoidMlp => "mlp",
            Self::WheelBandit => "bandit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Forward,
    Symmetric,
    T1t2,
    Neumann,
    Cg,
}

impl EstimatorKind {
    pub fn is_contrastive(self) -> bool {
        matches!(self, Self::Forward | Self::Symmetric)
    }
}

/// Step budget and gradient-norm tolerance of one phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCfg {
    pub steps: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub inner: OptimSpec,
    pub nudged: OptimSpec,
    pub outer: OptimSpec,
}

/// Log-spaced grid `lo·10^{i/per_decade}` up to `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    pub lo: f64,
    pub hi: f64,
    pub per_decade: usize,
}

impl LogGrid {
    pub fn values(&self) -> Vec<f64> {
        cml::numkit::stats::log_grid(self.lo, self.hi, self.per_decade)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadCfg {
    pub dim: usize,
    pub lambda: f64,
    pub sigma_omega: f64,
    pub sigma_task: f64,
    pub sigma_noise: f64,
    pub betas: LogGrid,
    /// Gradient-descent steps per phase; `null` means exact solutions.
    pub budgets: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeCfg {
    pub rows: usize,
    pub features: usize,
    pub noise: f64,
    /// CSV file to use instead of synthetic data.
    pub csv: Option<String>,
    pub header: bool,
    pub hidden: usize,
    pub lambda_init: f64,
    /// Scale of the Kaiming draw used as consolidation target; 0 gives plain ridge.
    pub prior_scale: f64,
    /// Newton refinement tolerance for both phases; `null` disables it.
    pub polish_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikingCfg {
    pub hidden: usize,
    pub eprop: EpropCfg,
    pub encoder: PoissonEncoder,
    pub lambda: f64,
    pub eval_tasks: usize,
    pub eval_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpModel {
    /// Complex synapse on every weight; `θ = ω`.
    Synapse,
    /// Hidden weights are `θ`; gains, shifts and readout are fast.
    Modulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCfg {
    pub hidden: Vec<usize>,
    pub model: MlpModel,
    pub lambda: f64,
    pub eval_tasks: usize,
    pub eval_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditCfg {
    pub hidden: usize,
    pub lambda: f64,
    pub pool: usize,
    pub n_learn: usize,
    pub n_eval: usize,
    pub delta: f64,
    pub horizon: usize,
    pub schedule: OnlineSchedule,
    pub online: OptimSpec,
    pub batch_size: usize,
    pub trace_stride: usize,
}

/// A fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub beta: f64,
    pub estimator: EstimatorKind,
    pub free: PhaseCfg,
    pub nudged: PhaseCfg,
    pub optim: Optimizers,
    pub meta_batch: usize,
    pub outer_steps: usize,
    /// Iterations of the Neumann or CG solver.
    pub solver_iterations: usize,
    pub quad: Option<QuadCfg>,
    pub ridge: Option<RidgeCfg>,
    pub spiking: Option<SpikingCfg>,
    pub mlp: Option<MlpCfg>,
    pub bandit: Option<BanditCfg>,
    pub out: Option<String>,
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn phase(steps: usize) -> PhaseCfg {
    PhaseCfg { steps, tol: 0.0 }
}

impl ExperimentConfig {
    /// Defaults for an experiment kind.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut c = Self {
            experiment: kind,
            seed: 0,
            beta: 0.1,
            estimator: EstimatorKind::Forward,
            free: phase(100),
            nudged: phase(50),
            optim: Optimizers {
                inner: OptimSpec::adam(1e-2),
                nudged: OptimSpec::adam(1e-2),
                outer: OptimSpec::adam(1e-2),
            },
            meta_batch: 4,
            outer_steps: 100,
            solver_iterations: 50,
            quad: None,
            ridge: None,
            spiking: None,
            mlp: None,
            bandit: None,
            out: None,
        };
        match kind {
            ExperimentKind::QuadVerify => {
                c.outer_steps = 0;
                c.meta_batch = 1;
                c.quad = Some(QuadCfg {
                    dim: 50,
                    lambda: 0.1,
                    sigma_omega: 2.0,
                    sigma_task: 1.0,
                    sigma_noise: 0.5,
                    betas: LogGrid {
                        lo: 1e-4,
                        hi: 1e2,
                        per_decade: 40,
                    },
                    budgets: vec![Some(5), Some(10), Some(20), Some(50), None],
                });
            }
            ExperimentKind::RidgeHyperopt => {
                c.beta = 1e-3;
                c.free = PhaseCfg { steps: 3000, tol: 1e-6 };
                // Newton refinement does the real work in both phases
                c.nudged = phase(1);
                c.optim.nudged = OptimSpec::gd(1e-3);
                c.optim.outer = OptimSpec::adam(0.05);
                c.meta_batch = 1;
                c.outer_steps = 30;
                c.ridge = Some(RidgeCfg {
                    rows: 1000,
                    features: 13,
                    noise: 0.1,
                    csv: None,
                    header: false,
                    hidden: 20,
                    lambda_init: 1.0,
                    prior_scale: 1.0,
                    polish_tol: Some(1e-11),
                });
            }
            ExperimentKind::SinusoidSpiking => {
                c.beta = 3.0;
                c.estimator = EstimatorKind::Symmetric;
                c.free = phase(500);
                c.nudged = phase(100);
                c.optim = Optimizers {
                    inner: OptimSpec::adam(1e-3),
                    nudged: OptimSpec::adam(3e-3),
                    outer: OptimSpec::adam(3e-3),
                };
                c.meta_batch = 1;
                c.outer_steps = 1000;
                c.spiking = Some(SpikingCfg {
                    hidden: 40,
                    eprop: EpropCfg {
                        pseudo: PseudoDerivative::Triangular,
                        ..EpropCfg::default()
                    },
                    encoder: PoissonEncoder::default(),
                    lambda: 1e-2,
                    eval_tasks: 10,
                    eval_every: 50,
                });
            }
            ExperimentKind::SinusoidMlp => {
                c.beta = 0.1;
                c.free = phase(100);
                c.nudged = phase(50);
                c.optim = Optimizers {
                    inner: OptimSpec::adam(1e-2),
                    nudged: OptimSpec::adam(1e-2),
                    outer: OptimSpec::adam(1e-3),
                };
                c.meta_batch = 4;
                c.outer_steps = 200;
                c.mlp = Some(MlpCfg {
                    hidden: vec![40, 40],
                    model: MlpModel::Synapse,
                    lambda: 0.1,
                    eval_tasks: 10,
                    eval_every: 20,
                });
            }
            ExperimentKind::WheelBandit => {
                c.beta = 0.3;
                c.free = phase(100);
                c.nudged = phase(50);
                c.optim = Optimizers {
                    inner: OptimSpec::adam(1e-4),
                    nudged: OptimSpec::adam(0.03),
                    outer: OptimSpec::adam(0.03),
                };
                c.meta_batch = 4;
                c.outer_steps = 150;
                c.bandit = Some(BanditCfg {
                    hidden: 32,
                    lambda: 1e3,
                    pool: 64,
                    n_learn: 512,
                    n_eval: 50,
                    delta: 0.5,
                    horizon: 20_000,
                    schedule: OnlineSchedule::default(),
                    online: OptimSpec::adam(1e-4),
                    batch_size: 64,
                    trace_stride: 100,
                });
            }
        }
        c
    }

    /// Range and consistency checks; returns every violation.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        if self.estimator.is_contrastive() {
            check(self.beta > 0.0 && self.beta.is_finite(), "β must be positive");
        }
        if self.estimator == EstimatorKind::Symmetric && self.experiment == ExperimentKind::QuadVerify {
            check(self.beta < 1.0, "symmetric quad-verify needs β < 1");
        }
        check(self.free.steps >= 1, "free.steps must be at least 1");
        check(self.nudged.steps >= 1, "nudged.steps must be at least 1");
        check(self.free.tol >= 0.0, "free.tol must be non-negative");
        check(self.nudged.tol >= 0.0, "nudged.tol must be non-negative");
        for (name, o) in [
            ("optim.inner", self.optim.inner),
            ("optim.nudged", self.optim.nudged),
            ("optim.outer", self.optim.outer),
        ] {
            check(o.lr > 0.0 && o.lr.is_finite(), &format!("{name}.lr must be positive"));
        }
        check(self.meta_batch >= 1, "meta_batch must be at least 1");
        if matches!(self.estimator, EstimatorKind::Neumann | EstimatorKind::Cg) {
            check(self.solver_iterations >= 1, "solver_iterations must be at least 1");
        }
        if let Some(out) = &self.out {
            check(!out.trim().is_empty(), "out must not be empty");
        }
        match self.experiment {
            ExperimentKind::QuadVerify => {
                check(
                    self.estimator.is_contrastive(),
                    "quad-verify needs the forward or symmetric estimator",
                );
                if let Some(q) = &self.quad {
                    check(q.dim >= 1, "quad.dim must be at least 1");
                    check(q.lambda > 0.0, "quad.lambda must be positive");
                    check(q.sigma_omega >= 0.0, "quad.sigma_omega must be non-negative");
                    check(q.sigma_task >= 0.0, "quad.sigma_task must be non-negative");
                    check(q.sigma_noise >= 0.0, "quad.sigma_noise must be non-negative");
                    check(
                        q.betas.lo > 0.0 && q.betas.hi >= q.betas.lo,
                        "quad.betas needs 0 < lo <= hi",
                    );
                    check(q.betas.per_decade >= 1, "quad.betas.per_decade must be at least 1");
                    check(!q.budgets.is_empty(), "quad.budgets must not be empty");
                    check(
                        q.budgets.iter().all(|b| b.map_or(true, |s| s >= 1)),
                        "quad.budgets entries must be at least 1 or null",
                    );
                    if self.estimator == EstimatorKind::Symmetric {
                        check(q.betas.hi < 1.0, "symmetric quad-verify needs quad.betas.hi < 1");
                    }
                }
            }
            ExperimentKind::RidgeHyperopt => {
                if let Some(r) = &self.ridge {
                    if r.csv.is_none() {
                        check(r.rows >= 4, "ridge.rows must be at least 4");
                        check(r.features >= 1, "ridge.features must be at least 1");
                    }
                    check(r.noise >= 0.0, "ridge.noise must be non-negative");
                    check(r.hidden >= 1, "ridge.hidden must be at least 1");
                    check(r.lambda_init > 0.0, "ridge.lambda_init must be positive");
                    check(r.prior_scale >= 0.0, "ridge.prior_scale must be non-negative");
                    check(
                        r.polish_tol.map_or(true, |t| t > 0.0),
                        "ridge.polish_tol must be positive",
                    );
                }
            }
            ExperimentKind::SinusoidSpiking => {
                if let Some(s) = &self.spiking {
                    check(s.hidden >= 1, "spiking.hidden must be at least 1");
                    check(s.lambda >= 0.0, "spiking.lambda must be non-negative");
                    check(s.eprop.activity_strength >= 0.0, "spiking.eprop.activity_strength must be non-negative");
                    check(
                        (0.0..=1.0).contains(&s.eprop.activity_target),
                        "spiking.eprop.activity_target must lie in [0, 1]",
                    );
                    check(s.eprop.out_lr_factor > 0.0, "spiking.eprop.out_lr_factor must be positive");
                    check(s.encoder.neurons >= 1, "spiking.encoder.neurons must be at least 1");
                    check(s.encoder.variance > 0.0, "spiking.encoder.variance must be positive");
                    check(s.encoder.steps >= 1, "spiking.encoder.steps must be at least 1");
                    check(s.eval_tasks >= 1, "spiking.eval_tasks must be at least 1");
                    check(s.eval_every >= 1, "spiking.eval_every must be at least 1");
                }
            }
            ExperimentKind::SinusoidMlp => {
                if let Some(m) = &self.mlp {
                    check(
                        !m.hidden.is_empty() && m.hidden.iter().all(|&h| h >= 1),
                        "mlp.hidden needs at least one non-empty layer",
                    );
                    check(m.lambda >= 0.0, "mlp.lambda must be non-negative");
                    check(m.eval_tasks >= 1, "mlp.eval_tasks must be at least 1");
                    check(m.eval_every >= 1, "mlp.eval_every must be at least 1");
                }
            }
            ExperimentKind::WheelBandit => {
                if let Some(b) = &self.bandit {
                    check(b.hidden >= 1, "bandit.hidden must be at least 1");
                    check(b.lambda >= 0.0, "bandit.lambda must be non-negative");
                    check(b.pool >= 1, "bandit.pool must be at least 1");
                    check(b.n_learn >= 1 && b.n_eval >= 1, "bandit.n_learn and bandit.n_eval must be at least 1");
                    check((0.0..=1.0).contains(&b.delta), "bandit.delta must lie in [0, 1]");
                    check(
                        b.horizon >= b.schedule.warmup_pulls * cml::tasks::N_ACTIONS && b.horizon >= 1,
                        "bandit.horizon must cover the warmup pulls",
                    );
                    check(b.schedule.refit_every >= 1, "bandit.schedule.refit_every must be at least 1");
                    check(b.online.lr > 0.0, "bandit.online.lr must be positive");
                    check(b.batch_size >= 1, "bandit.batch_size must be at least 1");
                    check(b.trace_stride >= 1, "bandit.trace_stride must be at least 1");
                }
            }
        }
        errs
    }

    /// Pretty JSON of the resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Value-network architecture of the bandit experiment.
    pub fn bandit_arch(&self) -> Option<MlpArch> {
        let b = self.bandit.as_ref()?;
        MlpArch::with_hidden(
            &[2, b.hidden, b.hidden, cml::tasks::N_ACTIONS],
            cml::numkit::Activation::Relu,
            cml::numkit::Activation::Linear,
        )
        .ok()
    }
}

/// Overlays `input` on `defaults`, recording keys that do not exist.
fn merge(defaults: &mut Value, input: &Value, path: &str, errs: &mut Vec<String>) {
    match (defaults, input) {
        (Value::Object(d), Value::Object(i)) => {
            for (k, v) in i {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match d.get_mut(k) {
                    Some(slot) if is_free_form(slot) => *slot = v.clone(),
                    Some(slot) => merge(slot, v, &p, errs),
                    None => errs.push(format!("unknown key `{p}`")),
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Slots replaced wholesale rather than merged key by key: arrays and
/// externally tagged enum values.
fn is_free_form(v: &Value) -> bool {
    !matches!(v, Value::Object(_))
}

/// Parses and validates a configuration, listing every problem found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let input: Value = serde_json::from_str(text).map_err(|e| {
        ConfigErrors(vec![format!(
            "syntax error at line {}, column {}: {e}",
            e.line(),
            e.column()
        )])
    })?;
    let Value::Object(obj) = &input else {
        return Err(ConfigErrors(vec!["configuration must be a JSON object".into()]));
    };
    let kind: ExperimentKind = match obj.get("experiment") {
        None => return Err(ConfigErrors(vec!["missing key `experiment`".into()])),
        Some(v) => serde_json::from_value(v.clone()).map_err(|_| {
            let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            ConfigErrors(vec![format!("`experiment` must be one of {}", names.join(", "))])
        })?,
    };
    let mut errs = Vec::new();
    for other in ExperimentKind::ALL {
        if other != kind && obj.get(other.section()).is_some_and(|v| !v.is_null()) {
            errs.push(format!(
                "section `{}` does not apply to {}",
                other.section(),
                kind.name()
            ));
        }
    }
    let mut merged = serde_json::to_value(ExperimentConfig::defaults(kind)).expect("defaults serialize");
    let filtered: Map<String, Value> = obj
        .iter()
        .filter(|(k, _)| {
            !ExperimentKind::ALL
                .iter()
                .any(|o| *o != kind && o.section() == k.as_str())
        })
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    merge(&mut merged, &Value::Object(filtered), "", &mut errs);
    let cfg: Option<ExperimentConfig> = match serde_json::from_value(merged) {
        Ok(c) => Some(c),
        Err(e) => {
            errs.push(format!("invalid value: {e}"));
            None
        }
    };
    if let Some(c) = &cfg {
        errs.extend(c.validate());
    }
    match cfg {
        Some(c) if errs.is_empty() => Ok(c),
        _ => Err(ConfigErrors(errs)),
    }
}
