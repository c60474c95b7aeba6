use std::time::Duration;

use cml::bilevel::{contrastive_update, symmetric_update, PhaseResult};
use cml::implicit::{implicit_meta_gradient, HvpScheme, MuSolver, MuSolverCfg};
use cml::numkit::{norm, stats, Rng};
use cml::spiking::{eprop_gradients, EpropCfg, LabeledRaster, LifParams, LifShape, Raster};
use cml::theory::{quad_contrastive_exact, QuadModel, QuadSampler};

use super::{property_battery, rel_diff, Criterion};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::experiments;
use crate::output::{Cell, RunRecord};

type Check = Result<(bool, String), String>;

pub static CRITERIA: [Criterion; 9] = [
    Criterion {
        id: 1,
        name: "quadratic oracle exactness",
        budget: Duration::from_secs(10),
        check: quad_exactness,
    },
    Criterion {
        id: 2,
        name: "order of accuracy",
        budget: Duration::from_secs(5),
        check: order_of_accuracy,
    },
    Criterion {
        id: 3,
        name: "error-curve shape",
        budget: Duration::from_secs(30),
        check: curve_shape,
    },
    Criterion {
        id: 4,
        name: "implicit baselines",
        budget: Duration::from_secs(10),
        check: implicit_baselines,
    },
    Criterion {
        id: 5,
        name: "finite-difference meta-gradient (ridge)",
        budget: Duration::from_secs(300),
        check: ridge_fd,
    },
    Criterion {
        id: 6,
        name: "spiking sinusoid meta-learning",
        budget: Duration::from_secs(1800),
        check: spiking_sinusoid,
    },
    Criterion {
        id: 7,
        name: "wheel bandit regret",
        budget: Duration::from_secs(1800),
        check: wheel_bandit,
    },
    Criterion {
        id: 8,
        name: "e-prop readout exactness",
        budget: Duration::from_secs(5),
        check: eprop_readout,
    },
    Criterion {
        id: 9,
        name: "property suites",
        budget: Duration::from_secs(300),
        check: properties,
    },
];

pub(super) fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Minimizer of `L_learn + β·L_eval` per coordinate, written out directly.
pub(super) fn fixed_point(m: &QuadModel, beta: f64) -> Vec<f64> {
    (0..m.dim())
        .map(|i| {
            let h = m.h[i];
            (h * m.phi_learn[i] + beta * h * m.phi_eval[i] + m.lambda * m.omega[i]) / ((1.0 + beta) * h + m.lambda)
        })
        .collect()
}

/// `∇ω L_eval(φ*(ω))` by the chain rule through the free fixed point.
pub(super) fn true_gradient(m: &QuadModel) -> Vec<f64> {
    let phi = fixed_point(m, 0.0);
    (0..m.dim())
        .map(|i| {
            let h = m.h[i];
            m.lambda / (h + m.lambda) * h * (phi[i] - m.phi_eval[i])
        })
        .collect()
}

pub(super) fn exact_phase(m: &QuadModel, beta: f64) -> PhaseResult {
    PhaseResult {
        phi: fixed_point(m, beta),
        beta,
        steps: 0,
        grad_norm: 0.0,
        value: 0.0,
    }
}

pub(super) fn random_instance(rng: &mut Rng) -> Result<QuadModel, String> {
    QuadSampler {
        dim: 1 + rng.below(50),
        ..Default::default()
    }
    .sample(rng)
    .map_err(err)
}

fn quad_exactness() -> Check {
    let mut rng = Rng::derive(0, "verify-quad-exact", 0);
    let (mut worst_est, mut worst_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let m = random_instance(&mut rng)?;
        let beta = 10f64.powf(rng.uniform(-3.0, 0.0));
        let p = m.problem();
        let delta = contrastive_update(&p, &m.omega, &exact_phase(&m, 0.0), &exact_phase(&m, beta)).map_err(err)?;
        let estimate: Vec<f64> = delta.iter().map(|d| -d).collect();
        let closed = quad_contrastive_exact(&m, beta).map_err(err)?;
        worst_est = worst_est.max(rel_diff(&estimate, &closed.estimate));
        let grad = true_gradient(&m);
        let predicted: Vec<f64> = (0..m.dim())
            .map(|i| beta / (1.0 + beta + m.lambda / m.h[i]) * grad[i])
            .collect();
        let miss: Vec<f64> = (0..m.dim())
            .map(|i| (grad[i] - estimate[i]) - predicted[i])
            .collect();
        worst_err = worst_err.max(norm(&miss) / norm(&grad));
    }
    Ok((
        worst_est <= 1e-10 && worst_err <= 1e-10,
        format!("1000 instances; estimate rel {worst_est:.2e}, error identity {worst_err:.2e} (tol 1e-10)"),
    ))
}

fn default_instance() -> Result<QuadModel, String> {
    QuadSampler::default()
        .sample(&mut Rng::derive(0, "quad-instance", 0))
        .map_err(err)
}

fn order_of_accuracy() -> Check {
    let m = default_instance()?;
    let p = m.problem();
    let grad = true_gradient(&m);
    let betas = stats::log_grid(1e-3, 1e-1, 10);
    let free = exact_phase(&m, 0.0);
    let (mut fwd, mut sym) = (Vec::new(), Vec::new());
    for &b in &betas {
        let d = contrastive_update(&p, &m.omega, &free, &exact_phase(&m, b)).map_err(err)?;
        fwd.push(norm(&grad.iter().zip(&d).map(|(g, d)| g + d).collect::<Vec<_>>()));
        let d = symmetric_update(&p, &m.omega, &exact_phase(&m, b), &exact_phase(&m, -b)).map_err(err)?;
        sym.push(norm(&grad.iter().zip(&d).map(|(g, d)| g + d).collect::<Vec<_>>()));
    }
    let (sf, ss) = (stats::loglog_slope(&betas, &fwd), stats::loglog_slope(&betas, &sym));
    Ok((
        (sf - 1.0).abs() <= 0.15 && (ss - 2.0).abs() <= 0.2,
        format!("forward slope {sf:.4} (1 ± 0.15), symmetric slope {ss:.4} (2 ± 0.2)"),
    ))
}

fn summary_num(r: &RunRecord, key: &str) -> Result<f64, String> {
    r.summary_value(key)
        .and_then(Cell::as_f64)
        .ok_or_else(|| format!("summary lacks `{key}`"))
}

fn run_defaults(kind: ExperimentKind) -> Result<RunRecord, String> {
    let cfg = ExperimentConfig::defaults(kind);
    let record = experiments::run(&cfg.to_json(), &cfg);
    match &record.error {
        Some(e) => Err(e.clone()),
        None => Ok(record),
    }
}

fn curve_shape() -> Check {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::QuadVerify);
    if let Some(q) = cfg.quad.as_mut() {
        q.budgets = vec![Some(5), Some(10), Some(20), Some(50)];
    }
    let record = experiments::run(&cfg.to_json(), &cfg);
    if let Some(e) = record.error {
        return Err(e);
    }
    let t = record.table("argmin").ok_or("no argmin table")?;
    let betas: Vec<f64> = t.column("beta").ok_or("no beta column")?.iter().filter_map(Cell::as_f64).collect();
    let interior: Vec<f64> = t
        .column("interior")
        .ok_or("no interior column")?
        .iter()
        .filter_map(Cell::as_f64)
        .collect();
    let u_shaped = interior.iter().all(|&i| i == 1.0);
    let decreasing = betas.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = betas.iter().map(|b| format!("{b:.3e}")).collect();
    Ok((
        u_shaped && decreasing && betas.len() == 4,
        format!(
            "argmin β for 5/10/20/50 steps: {}; interior {u_shaped}, decreasing {decreasing}",
            shown.join(", ")
        ),
    ))
}

pub(super) fn mu_cfg(solver: MuSolver) -> MuSolverCfg {
    MuSolverCfg {
        solver,
        hvp: HvpScheme::Exact,
    }
}

fn implicit_baselines() -> Check {
    let mut rng = Rng::derive(0, "verify-implicit", 0);
    let (mut worst_cg, mut worst_neu, mut worst_t1) = (0.0f64, 0.0f64, 0.0f64);
    let mut instances = vec![default_instance()?];
    for _ in 0..99 {
        instances.push(random_instance(&mut rng)?);
    }
    for m in &instances {
        let p = m.problem();
        let phi = fixed_point(m, 0.0);
        let truth = true_gradient(m);
        let cg = implicit_meta_gradient(&p, &m.omega, &phi, &mu_cfg(MuSolver::Cg { iterations: m.dim() })).map_err(err)?;
        worst_cg = worst_cg.max(rel_diff(&cg.grad, &truth));
        let ne = implicit_meta_gradient(
            &p,
            &m.omega,
            &phi,
            &mu_cfg(MuSolver::Neumann {
                alpha: None,
                iterations: 500,
            }),
        )
        .map_err(err)?;
        worst_neu = worst_neu.max(rel_diff(&ne.grad, &truth));
        // identity in place of the inverse Hessian: λ·H(φ* − φᵉ)
        let t1 = implicit_meta_gradient(&p, &m.omega, &phi, &mu_cfg(MuSolver::Identity)).map_err(err)?;
        let predicted: Vec<f64> = (0..m.dim())
            .map(|i| m.lambda * m.h[i] * (phi[i] - m.phi_eval[i]))
            .collect();
        worst_t1 = worst_t1.max(rel_diff(&t1.grad, &predicted));
    }
    let unit = QuadModel::new(vec![1.0], vec![1.0], vec![2.0], 1.0, vec![0.0]).map_err(err)?;
    let phi = fixed_point(&unit, 0.0);
    let t1 = implicit_meta_gradient(&unit.problem(), &unit.omega, &phi, &mu_cfg(MuSolver::Identity)).map_err(err)?;
    let unit_ok = t1.grad == vec![-1.5] && true_gradient(&unit) == vec![-0.75];
    Ok((
        worst_cg <= 1e-6 && worst_neu <= 1e-6 && worst_t1 <= 1e-14 && unit_ok,
        format!(
            "100 instances; CG rel {worst_cg:.2e}, Neumann rel {worst_neu:.2e}, T1-T2 vs identity substitution {worst_t1:.2e}; 1-D T1-T2 {} vs true {}",
            t1.grad[0],
            true_gradient(&unit)[0]
        ),
    ))
}

fn ridge_fd() -> Check {
    let cfg = ExperimentConfig::defaults(ExperimentKind::RidgeHyperopt);
    let report = experiments::ridge_fd_check(&cfg, 10, 1e-3).map_err(err)?;
    let worst = report.checks.iter().map(|c| c.rel_error()).fold(0.0, f64::max);
    let precise = report.free_grad_norm <= 1e-9 && report.nudged_grad_norm <= 1e-9;
    Ok((
        worst <= 0.05 && precise,
        format!(
            "10 coordinates, worst rel {worst:.3e} (tol 5e-2); phase grad norms {:.1e} / {:.1e}",
            report.free_grad_norm, report.nudged_grad_norm
        ),
    ))
}

fn spiking_sinusoid() -> Check {
    let r = run_defaults(ExperimentKind::SinusoidSpiking)?;
    let ratio = summary_num(&r, "ratio_to_baseline")?;
    let rho = summary_num(&r, "spearman_rho")?;
    Ok((
        ratio < 0.5 && rho < -0.5,
        format!(
            "median MSE {:.4} vs baseline {:.4}: ratio {ratio:.3} (< 0.5), Spearman ρ {rho:.3} (< −0.5)",
            summary_num(&r, "final_mse")?,
            summary_num(&r, "baseline_mse")?
        ),
    ))
}

fn wheel_bandit() -> Check {
    let r = run_defaults(ExperimentKind::WheelBandit)?;
    let agent = summary_num(&r, "normalized_regret")?;
    let random = summary_num(&r, "random_normalized_regret")?;
    Ok((
        agent < 0.7 && (random - 1.0).abs() <= 0.05,
        format!("normalized regret {agent:.4} (< 0.7), random control {random:.4} (1 ± 0.05)"),
    ))
}

/// Gradient of the batch MSE with respect to the readout weights, from a
/// dense re-simulation of the network: `y^t = Σ_{s<t} κ^{t−1−s} W_out z^s`,
/// so `∂ŷ_k/∂W_kj = (1/T) Σ_{t=1..T} Σ_{s<t} κ^{t−1−s} z_j^s`.
pub fn eprop_readout_oracle(p: &LifParams, batch: &[LabeledRaster]) -> Vec<f64> {
    let s = p.shape();
    let (h_n, k_n) = (s.hidden, s.outputs);
    let mut grad = vec![0.0; k_n * h_n];
    for item in batch {
        let t_len = item.raster.len();
        let mut h = vec![0.0; h_n];
        let mut z = vec![0.0; h_n];
        let mut spikes = vec![z.clone()];
        for t in 0..t_len {
            let mut x = vec![0.0; s.inputs];
            for &i in item.raster.active(t) {
                x[i] = 1.0;
            }
            let mut next = vec![0.0; h_n];
            for j in 0..h_n {
                let mut drive = 0.0;
                for i in 0..h_n {
                    if i != j {
                        drive += p.w_rec.get(j, i) * z[i];
                    }
                }
                for (i, xi) in x.iter().enumerate() {
                    drive += p.w_in.get(j, i) * xi;
                }
                next[j] = p.alpha * h[j] + drive - z[j] * p.v_th;
            }
            h = next;
            z = h.iter().map(|&v| if v >= p.v_th { 1.0 } else { 0.0 }).collect();
            spikes.push(z.clone());
        }
        if t_len == 0 {
            continue;
        }
        let mut sens = vec![0.0; h_n];
        for t in 1..=t_len {
            for (sidx, zs) in spikes.iter().enumerate().take(t) {
                let w = p.kappa.powi((t - 1 - sidx) as i32);
                for j in 0..h_n {
                    sens[j] += w * zs[j];
                }
            }
        }
        let mut y = vec![0.0; k_n];
        let mut pred = vec![0.0; k_n];
        for zs in spikes.iter().take(t_len) {
            for k in 0..k_n {
                y[k] = p.kappa * y[k] + (0..h_n).map(|j| p.w_out.get(k, j) * zs[j]).sum::<f64>();
                pred[k] += y[k];
            }
        }
        for k in 0..k_n {
            let err = pred[k] / t_len as f64 - item.target[k];
            for j in 0..h_n {
                grad[k * h_n + j] += 2.0 * err * sens[j] / (t_len as f64 * batch.len() as f64);
            }
        }
    }
    grad
}

pub(super) fn toy_network(rng: &mut Rng) -> Result<(LifParams, Vec<LabeledRaster>), String> {
    let shape = LifShape {
        inputs: 1 + rng.below(4),
        hidden: 1 + rng.below(5),
        outputs: 1 + rng.below(2),
    };
    let mut p = LifParams::kaiming(shape, rng);
    p.w_in.as_mut_slice().iter_mut().for_each(|w| *w *= 20.0);
    p.w_rec.as_mut_slice().iter_mut().for_each(|w| *w *= 50.0);
    for w in p.w_out.as_mut_slice() {
        *w = rng.normal(0.0, 1.0);
    }
    let steps = 1 + rng.below(10);
    let batch = (0..1 + rng.below(3))
        .map(|_| {
            let active = (0..steps)
                .map(|_| (0..shape.inputs).filter(|_| rng.bernoulli(0.5)).collect())
                .collect();
            Ok(LabeledRaster {
                raster: Raster::new(shape.inputs, active).map_err(err)?,
                target: (0..shape.outputs).map(|_| rng.normal(0.0, 1.0)).collect(),
            })
        })
        .collect::<Result<_, String>>()?;
    Ok((p, batch))
}

fn eprop_readout() -> Check {
    let mut rng = Rng::derive(0, "verify-eprop", 0);
    let mut worst = 0.0f64;
    let mut with_spikes = 0;
    for _ in 0..100 {
        let (p, batch) = toy_network(&mut rng)?;
        let g = eprop_gradients(&p, &EpropCfg::default(), &batch, true).map_err(err)?;
        let want = eprop_readout_oracle(&p, &batch);
        for (a, b) in g.w_out.as_slice().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        if want.iter().any(|v| *v != 0.0) {
            with_spikes += 1;
        }
    }
    Ok((
        worst <= 1e-10 && with_spikes >= 50,
        format!("100 toys ({with_spikes} with spikes), max abs diff {worst:.2e} (tol 1e-10)"),
    ))
}

fn properties() -> Check {
    let outcomes = property_battery();
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.pass()).map(|o| o.line()).collect();
    let trials: usize = outcomes.iter().map(|o| o.trials).sum();
    if failed.is_empty() {
        Ok((true, format!("{} properties, {trials} trials", outcomes.len())))
    } else {
        Ok((false, format!("{} failed: {}", failed.len(), failed.join(" | "))))
    }
}
