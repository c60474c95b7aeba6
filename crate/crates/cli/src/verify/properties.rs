//! Randomized property checks, one batch of trials per property. Each trial
//! reports a nonnegative discrepancy that must stay within the property's
//! tolerance.

use cml::bilevel::{
    contrastive_update, meta_step, symmetric_update, AugmentedObjective, BilevelProblem, ContrastiveConfig,
    ContrastiveEstimator, FreeInit, MetaState, PhaseBudget, PhaseResult, Variant,
};
use cml::implicit::{implicit_meta_gradient, solve_mu, HvpScheme, MuSolver, MuSolverCfg};
use cml::numkit::{
    dot, loss_eval, masked_mse, mlp_backward, mlp_forward, norm, stats, Activation, LossKind, Mat, MlpArch, MlpParams,
    ModulationParams, OptimSpec, Rng, Targets,
};
use cml::spiking::{eprop_gradients, lif_rollout, low_pass, EpropCfg, LifParams, LifShape, LifState, SpikingData};
use cml::synapse::{
    modulation_theta_partials, synapse_meta_update, DataLoss, ModulationProblem, RegressionData, SynapseLayout,
    SynapseMeta, SynapseProblem,
};
use cml::tasks::{
    bandit_meta_dataset, parse_csv, sinusoid_sample, write_csv, BanditData, MlpRegression, RegretLedger, WheelTask,
    N_ACTIONS,
};
use cml::theory::{
    beta_star, bound_b, bound_b_derivative, quad_contrastive_exact, quad_error_bounds, quad_solution, BoundParams,
    QuadData, QuadModel, QuadSampler,
};

use super::criteria::{err, eprop_readout_oracle, mu_cfg, random_instance, toy_network};
use super::{fd_gradient, rel_diff};
use crate::config::{parse_config, ExperimentConfig, ExperimentKind, LogGrid};
use crate::experiments;

type LossFn<'a> = dyn Fn(&Mat) -> cml::Result<(f64, Mat)> + 'a;

type Trial = Result<f64, String>;

/// Outcome of one property over all its trials.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub module: &'static str,
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Largest discrepancy seen.
    pub worst: f64,
    pub tol: f64,
    /// First error raised by a trial, if any.
    pub note: Option<String>,
}

impl PropertyOutcome {
    pub fn pass(&self) -> bool {
        self.failures == 0
    }

    pub fn line(&self) -> String {
        let mut s = format!(
            "[{}] {}/{}: {} trials, {} failed, worst {:.2e} (tol {:.0e})",
            if self.pass() { "ok" } else { "FAIL" },
            self.module,
            self.name,
            self.trials,
            self.failures,
            self.worst,
            self.tol
        );
        if let Some(n) = &self.note {
            s.push_str(&format!("; {n}"));
        }
        s
    }
}

fn prop(
    module: &'static str,
    name: &'static str,
    trials: usize,
    tol: f64,
    mut trial: impl FnMut(usize, &mut Rng) -> Trial,
) -> PropertyOutcome {
    let mut rng = Rng::derive(0, name, 0);
    let mut out = PropertyOutcome {
        module,
        name,
        trials,
        failures: 0,
        worst: 0.0,
        tol,
        note: None,
    };
    for i in 0..trials {
        match trial(i, &mut rng) {
            Ok(d) if d <= tol => out.worst = out.worst.max(d),
            Ok(d) => {
                out.failures += 1;
                out.worst = if d.is_nan() { f64::NAN } else { out.worst.max(d) };
            }
            Err(e) => {
                out.failures += 1;
                out.note.get_or_insert(e);
            }
        }
    }
    out
}

fn flag(ok: bool) -> f64 {
    if ok {
        0.0
    } else {
        1.0
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn bits(a: &[f64]) -> Vec<u64> {
    a.iter().map(|x| x.to_bits()).collect()
}

fn small_arch(rng: &mut Rng, hidden: Activation, inputs: usize, outputs: usize) -> Result<MlpArch, String> {
    let mut widths = vec![inputs];
    for _ in 0..1 + rng.below(2) {
        widths.push(1 + rng.below(4));
    }
    widths.push(outputs);
    MlpArch::with_hidden(&widths, hidden, Activation::Linear).map_err(err)
}

fn random_mat(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Result<Mat, String> {
    Mat::from_vec(rows, cols, rng.normal_vec(rows * cols, 0.0, std)).map_err(err)
}

fn random_modulation(rng: &mut Rng, arch: &MlpArch) -> Result<ModulationParams, String> {
    let mut flat = Vec::new();
    for &w in arch.hidden_widths() {
        flat.extend((0..w).map(|_| rng.uniform(0.5, 1.5)));
        flat.extend(rng.normal_vec(w, 0.0, 0.3));
    }
    ModulationParams::from_flat(arch, &flat).map_err(err)
}

fn regression_data(rng: &mut Rng, arch: &MlpArch) -> Result<RegressionData, String> {
    let (n_in, n_out) = (arch.input_dim(), arch.output_dim());
    let (nl, ne) = (1 + rng.below(6), 1 + rng.below(6));
    Ok(RegressionData {
        learn_x: random_mat(rng, nl, n_in, 1.0)?,
        learn_y: random_mat(rng, nl, n_out, 1.0)?,
        eval_x: random_mat(rng, ne, n_in, 1.0)?,
        eval_y: random_mat(rng, ne, n_out, 1.0)?,
    })
}

fn small_quad(rng: &mut Rng, max_dim: usize) -> Result<QuadModel, String> {
    QuadSampler {
        dim: 1 + rng.below(max_dim),
        ..Default::default()
    }
    .sample(rng)
    .map_err(err)
}

fn random_quad_data(rng: &mut Rng, n: usize) -> QuadData {
    QuadData {
        h: (0..n).map(|_| rng.uniform(0.1, 1.0)).collect(),
        phi_learn: rng.normal_vec(n, 0.0, 1.0),
        phi_eval: rng.normal_vec(n, 0.0, 1.0),
    }
}

fn phase(phi: Vec<f64>, beta: f64) -> PhaseResult {
    PhaseResult {
        phi,
        beta,
        steps: 0,
        grad_norm: 0.0,
        value: 0.0,
    }
}

/// Relative FD mismatch of a data loss's learn and eval gradients.
fn data_loss_fd(d: &dyn DataLoss, phi: &[f64]) -> Trial {
    let n = d.dim();
    let mut worst = 0.0f64;
    for eval in [false, true] {
        let call = |x: &[f64], g: &mut [f64]| if eval { d.eval(x, g) } else { d.learn(x, g) };
        let mut g = vec![0.0; n];
        call(phi, &mut g).map_err(err)?;
        let fd = fd_gradient(
            &mut |x| {
                let mut s = vec![0.0; n];
                call(x, &mut s).unwrap_or(f64::NAN)
            },
            phi,
        );
        worst = worst.max(rel_diff(&g, &fd));
    }
    Ok(worst)
}

/// Runs every property in a fixed order.
pub fn property_battery() -> Vec<PropertyOutcome> {
    let mut out = Vec::new();
    out.extend(numkit_props());
    out.extend(bilevel_props());
    out.extend(synapse_props());
    out.extend(implicit_props());
    out.extend(theory_props());
    out.extend(tasks_props());
    out.extend(spiking_props());
    out.extend(cli_props());
    out.extend(fd_props());
    out
}

fn numkit_props() -> Vec<PropertyOutcome> {
    vec![
        prop("numkit", "mlp backward vs finite differences", 100, 1e-6, |_, rng| {
            let n_in = 1 + rng.below(3);
            let n_out = 1 + rng.below(3);
            let arch = small_arch(rng, Activation::Tanh, n_in, n_out)?;
            let params = MlpParams::from_flat(arch.clone(), rng.normal_vec(arch.n_params(), 0.0, 0.7)).map_err(err)?;
            let modulation = random_modulation(rng, &arch)?;
            let batch = 1 + rng.below(4);
            let x = random_mat(rng, batch, n_in, 1.0)?;
            let u = random_mat(rng, batch, n_out, 1.0)?;
            let (_, cache) = mlp_forward(&params, Some(&modulation), &x).map_err(err)?;
            let g = mlp_backward(&params, &cache, &u).map_err(err)?;
            let g_mod = g.modulation.ok_or("no modulation gradient")?.to_flat();
            let (np, nm) = (arch.n_params(), modulation.n_params());
            let mut point = params.as_slice().to_vec();
            point.extend(modulation.to_flat());
            point.extend_from_slice(x.as_slice());
            let mut f = |z: &[f64]| -> f64 {
                let run = || -> cml::Result<f64> {
                    let p = MlpParams::from_flat(arch.clone(), z[..np].to_vec())?;
                    let m = ModulationParams::from_flat(&arch, &z[np..np + nm])?;
                    let xin = Mat::from_vec(batch, n_in, z[np + nm..].to_vec())?;
                    let (y, _) = mlp_forward(&p, Some(&m), &xin)?;
                    Ok(dot(y.as_slice(), u.as_slice()))
                };
                run().unwrap_or(f64::NAN)
            };
            let fd = fd_gradient(&mut f, &point);
            let mut analytic = g.params.as_slice().to_vec();
            analytic.extend(g_mod);
            analytic.extend_from_slice(g.input.as_slice());
            Ok(rel_diff(&analytic, &fd))
        }),
        prop("numkit", "identity modulation is a no-op", 100, 1e-12, |i, rng| {
            let act = if i % 2 == 0 { Activation::Tanh } else { Activation::Relu };
            let (n_in, n_out) = (1 + rng.below(3), 1 + rng.below(3));
            let arch = small_arch(rng, act, n_in, n_out)?;
            let params = MlpParams::from_flat(arch.clone(), rng.normal_vec(arch.n_params(), 0.0, 1.0)).map_err(err)?;
            let rows = 1 + rng.below(5);
            let x = random_mat(rng, rows, arch.input_dim(), 1.0)?;
            let plain = mlp_forward(&params, None, &x).map_err(err)?.0;
            let ident = mlp_forward(&params, Some(&ModulationParams::identity(&arch)), &x).map_err(err)?.0;
            Ok(diff(plain.as_slice(), ident.as_slice()).iter().fold(0.0, |m, d| m.max(d.abs())))
        }),
        prop("numkit", "derived streams are reproducible", 100, 0.0, |_, rng| {
            let seed = rng.below(1 << 30) as u64;
            let index = rng.below(1000) as u64;
            let draw = |mut r: Rng| (0..16).map(|_| r.uniform(0.0, 1.0)).collect::<Vec<f64>>();
            let a = draw(Rng::derive(seed, "stream", index));
            let b = draw(Rng::derive(seed, "stream", index));
            let c = draw(Rng::derive(seed, "stream", index + 1));
            let d = draw(Rng::derive(seed, "other", index));
            Ok(flag(bits(&a) == bits(&b) && a != c && a != d))
        }),
        prop("numkit", "gradient descent decreases an SPD quadratic", 100, 1e-12, |_, rng| {
            let n = 1 + rng.below(8);
            let b = random_mat(rng, n, n, 1.0)?;
            let mut a = Mat::zeros(n, n);
            for r in 0..n {
                for c in 0..n {
                    let v: f64 = (0..n).map(|k| b.get(k, r) * b.get(k, c)).sum();
                    a.set(r, c, v + if r == c { 0.1 } else { 0.0 });
                }
            }
            let rhs = rng.normal_vec(n, 0.0, 1.0);
            let f = |x: &[f64]| -> cml::Result<(f64, Vec<f64>)> {
                let ax = a.matvec(x)?;
                let grad: Vec<f64> = ax.iter().zip(&rhs).map(|(p, q)| p - q).collect();
                Ok((0.5 * dot(x, &ax) - dot(x, &rhs), grad))
            };
            let trace: f64 = (0..n).map(|i| a.get(i, i)).sum();
            let mut opt = OptimSpec::gd(1.0 / trace).build(n);
            let mut x = rng.normal_vec(n, 0.0, 1.0);
            let (f0, _) = f(&x).map_err(err)?;
            let (mut prev, mut worst) = (f0, 0.0f64);
            for _ in 0..50 {
                let (_, g) = f(&x).map_err(err)?;
                opt.step(&mut x, &g).map_err(err)?;
                let (v, _) = f(&x).map_err(err)?;
                worst = worst.max((v - prev) / (1.0 + f0.abs()));
                prev = v;
            }
            Ok(if prev < f0 { worst.max(0.0) } else { 1.0 })
        }),
    ]
}

fn bilevel_props() -> Vec<PropertyOutcome> {
    let pools: Vec<rayon::ThreadPool> = [1, 4]
        .iter()
        .filter_map(|&n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok())
        .collect();
    vec![
        prop("bilevel", "augmented objective is affine in beta", 100, 1e-12, |_, rng| {
            let m = random_instance(rng)?;
            let p = m.problem();
            let phi = rng.normal_vec(m.dim(), 0.0, 2.0);
            let beta = rng.uniform(-1.0, 2.0);
            let (v0, g0) = AugmentedObjective::new(&p, &m.omega, 0.0).eval(&phi).map_err(err)?;
            let (vb, gb) = AugmentedObjective::new(&p, &m.omega, beta).eval(&phi).map_err(err)?;
            let mut ge = vec![0.0; m.dim()];
            let ve = p.eval(&m.omega, &phi, &mut ge).map_err(err)?;
            let value_miss = (vb - v0 - beta * ve).abs() / (1.0 + vb.abs());
            let expect: Vec<f64> = g0.iter().zip(&ge).map(|(a, b)| a + beta * b).collect();
            Ok(value_miss.max(rel_diff(&gb, &expect)))
        }),
        prop("bilevel", "solved phases match the closed-form estimate", 100, 1e-8, |_, rng| {
            let m = small_quad(rng, 10)?;
            let p = m.problem();
            let beta = 10f64.powf(rng.uniform(-2.0, 0.0));
            let solve = |b: f64| {
                let lr = 1.0 / ((1.0 + b) + m.lambda);
                cml::bilevel::solve_phase(
                    &AugmentedObjective::new(&p, &m.omega, b),
                    m.omega.clone(),
                    OptimSpec::gd(lr),
                    PhaseBudget {
                        max_steps: 100_000,
                        grad_tol: 1e-13,
                    },
                )
            };
            let free = solve(0.0).map_err(err)?;
            let nudged = solve(beta).map_err(err)?;
            let delta = contrastive_update(&p, &m.omega, &free, &nudged).map_err(err)?;
            let estimate: Vec<f64> = delta.iter().map(|d| -d).collect();
            let exact = quad_contrastive_exact(&m, beta).map_err(err)?;
            Ok(rel_diff(&estimate, &exact.estimate))
        }),
        prop("bilevel", "error slopes on random instances", 100, 1.0, |_, rng| {
            let m = small_quad(rng, 10)?;
            let p = m.problem();
            let truth = cml::theory::quad_meta_gradient(&m);
            let betas = stats::log_grid(1e-3, 1e-2, 10);
            let exact = |b: f64| quad_solution(&m, b).map(|phi| phase(phi, b));
            let free = exact(0.0).map_err(err)?;
            let (mut fwd, mut sym) = (Vec::new(), Vec::new());
            for &b in &betas {
                let d = contrastive_update(&p, &m.omega, &free, &exact(b).map_err(err)?).map_err(err)?;
                fwd.push(norm(&truth.iter().zip(&d).map(|(g, d)| g + d).collect::<Vec<_>>()));
                let d = symmetric_update(&p, &m.omega, &exact(b).map_err(err)?, &exact(-b).map_err(err)?).map_err(err)?;
                sym.push(norm(&truth.iter().zip(&d).map(|(g, d)| g + d).collect::<Vec<_>>()));
            }
            let sf = stats::loglog_slope(&betas, &fwd);
            let ss = stats::loglog_slope(&betas, &sym);
            Ok(((sf - 1.0).abs() / 0.15).max((ss - 2.0).abs() / 0.2))
        }),
        prop("bilevel", "meta step is independent of thread count", 100, 0.0, |_, rng| {
            if pools.len() != 2 {
                return Err("could not build thread pools".into());
            }
            let dim = 1 + rng.below(10);
            let sampler = QuadSampler {
                dim,
                ..Default::default()
            };
            let batch: Vec<_> = (0..4)
                .map(|_| sampler.sample(rng).map(|m| m.problem()))
                .collect::<cml::Result<_>>()
                .map_err(err)?;
            let theta = rng.normal_vec(dim, 0.0, 1.0);
            let estimator = ContrastiveEstimator::new(ContrastiveConfig {
                variant: Variant::Forward,
                beta: 0.1,
                free_budget: PhaseBudget::steps(30),
                nudged_budget: PhaseBudget::steps(30),
                free_optim: OptimSpec::gd(0.5),
                nudged_optim: OptimSpec::gd(0.5),
                newton_polish: None,
            });
            let runs: Vec<Vec<u64>> = pools
                .iter()
                .map(|pool| {
                    pool.install(|| {
                        let mut state = MetaState::new(theta.clone(), OptimSpec::adam(0.01));
                        for _ in 0..3 {
                            meta_step(&mut state, &batch, &estimator, &FreeInit::Problem)?;
                        }
                        Ok(bits(state.theta()))
                    })
                })
                .collect::<cml::Result<_>>()
                .map_err(err)?;
            Ok(flag(runs[0] == runs[1]))
        }),
    ]
}

fn synapse_props() -> Vec<PropertyOutcome> {
    fn random_rule_inputs(rng: &mut Rng) -> (Vec<f64>, Vec<f64>, f64, SynapseMeta) {
        let n = 1 + rng.below(20);
        let free = rng.normal_vec(n, 0.0, 1.0);
        let nudged = rng.normal_vec(n, 0.0, 1.0);
        let beta = rng.uniform(0.01, 1.0);
        let lambda = (0..n).map(|_| rng.uniform(0.01, 2.0)).collect();
        let meta = SynapseMeta {
            omega: rng.normal_vec(n, 0.0, 1.0),
            lambda,
        };
        (free, nudged, beta, meta)
    }
    vec![
        prop("synapse", "update signs follow the weight movement", 100, 0.0, |_, rng| {
            let (free, nudged, beta, meta) = random_rule_inputs(rng);
            let (dw, dl) = synapse_meta_update(&free, &nudged, beta, &meta).map_err(err)?;
            let mut bad = 0;
            for i in 0..free.len() {
                let moved = nudged[i] - free[i];
                if (dw[i] > 0.0) != (moved > 0.0) || (dw[i] < 0.0) != (moved < 0.0) {
                    bad += 1;
                }
                let closer = (nudged[i] - meta.omega[i]).abs() < (free[i] - meta.omega[i]).abs();
                if (dl[i] > 0.0) != closer {
                    bad += 1;
                }
            }
            Ok(bad as f64)
        }),
        prop("synapse", "updates are local to each synapse", 100, 0.0, |_, rng| {
            let (free, nudged, beta, meta) = random_rule_inputs(rng);
            let i = rng.below(free.len());
            let (dw, dl) = synapse_meta_update(&free, &nudged, beta, &meta).map_err(err)?;
            let shake = |v: &[f64], rng: &mut Rng| -> Vec<f64> {
                v.iter()
                    .enumerate()
                    .map(|(j, &x)| if j == i { x } else { x + rng.normal(0.0, 1.0) })
                    .collect()
            };
            let free2 = shake(&free, rng);
            let nudged2 = shake(&nudged, rng);
            let omega2 = shake(&meta.omega, rng);
            let lambda2 = shake(&meta.lambda, rng).iter().map(|l| l.abs()).collect();
            let meta2 = SynapseMeta {
                omega: omega2,
                lambda: lambda2,
            };
            let (dw2, dl2) = synapse_meta_update(&free2, &nudged2, beta, &meta2).map_err(err)?;
            Ok(flag(dw[i].to_bits() == dw2[i].to_bits() && dl[i].to_bits() == dl2[i].to_bits()))
        }),
        prop("synapse", "local rule equals the generic estimate", 100, 1e-9, |_, rng| {
            let (free, nudged, beta, meta) = random_rule_inputs(rng);
            let problem = SynapseProblem::new(random_quad_data(rng, free.len()), SynapseLayout::BOTH, meta.clone())
                .map_err(err)?;
            let theta = SynapseLayout::BOTH.pack(&meta);
            let generic = contrastive_update(&problem, &theta, &phase(free.clone(), 0.0), &phase(nudged.clone(), beta))
                .map_err(err)?;
            let (dw, dl) = synapse_meta_update(&free, &nudged, beta, &meta).map_err(err)?;
            let local: Vec<f64> = dw.into_iter().chain(dl).collect();
            Ok(rel_diff(&generic, &local))
        }),
        prop("synapse", "eval loss ignores the synaptic state", 100, 0.0, |_, rng| {
            let (phi, _, _, meta) = random_rule_inputs(rng);
            let n = phi.len();
            let problem =
                SynapseProblem::new(random_quad_data(rng, n), SynapseLayout::BOTH, meta.clone()).map_err(err)?;
            let t1 = SynapseLayout::BOTH.pack(&meta);
            let t2: Vec<f64> = t1.iter().map(|t| t.abs() + rng.uniform(0.1, 1.0)).collect();
            let (mut g1, mut g2) = (vec![0.0; n], vec![0.0; n]);
            let v1 = problem.eval(&t1, &phi, &mut g1).map_err(err)?;
            let v2 = problem.eval(&t2, &phi, &mut g2).map_err(err)?;
            let partials = problem.eval_theta_partials(&t2, &phi).map_err(err)?;
            Ok(flag(
                v1.to_bits() == v2.to_bits() && bits(&g1) == bits(&g2) && partials.iter().all(|p| *p == 0.0),
            ))
        }),
    ]
}

fn implicit_props() -> Vec<PropertyOutcome> {
    vec![
        prop("implicit", "CG and Neumann agree", 100, 1e-8, |_, rng| {
            let m = small_quad(rng, 20)?;
            let p = m.problem();
            let phi = quad_solution(&m, 0.0).map_err(err)?;
            let cg = implicit_meta_gradient(&p, &m.omega, &phi, &mu_cfg(MuSolver::Cg { iterations: m.dim() }))
                .map_err(err)?;
            let ne = implicit_meta_gradient(
                &p,
                &m.omega,
                &phi,
                &mu_cfg(MuSolver::Neumann {
                    alpha: None,
                    iterations: 3000,
                }),
            )
            .map_err(err)?;
            Ok(rel_diff(&cg.grad, &ne.grad))
        }),
        prop("implicit", "identity solver gives the identity substitution", 100, 1e-14, |_, rng| {
            let m = small_quad(rng, 20)?;
            let phi = quad_solution(&m, 0.0).map_err(err)?;
            let t1 = implicit_meta_gradient(&m.problem(), &m.omega, &phi, &mu_cfg(MuSolver::Identity)).map_err(err)?;
            let want: Vec<f64> = (0..m.dim())
                .map(|i| m.lambda * m.h[i] * (phi[i] - m.phi_eval[i]))
                .collect();
            Ok(rel_diff(&t1.grad, &want))
        }),
        prop("implicit", "Neumann residuals contract at the predicted rate", 100, 1e-9, |_, rng| {
            let n = 2 + rng.below(19);
            let lambda = 0.1;
            let curv: Vec<f64> = (1..=n).map(|i| 1.0 / i as f64 + lambda).collect();
            let alpha = 1.0 / curv[0];
            let rate = 1.0 - alpha * curv[n - 1];
            let g = rng.normal_vec(n, 0.0, 1.0);
            let solve = solve_mu(
                &g,
                |v| Ok(v.iter().zip(&curv).map(|(a, b)| a * b).collect()),
                &MuSolverCfg {
                    solver: MuSolver::Neumann {
                        alpha: Some(alpha),
                        iterations: 300,
                    },
                    hvp: HvpScheme::Exact,
                },
            )
            .map_err(err)?;
            // r_k = g ⊙ (1 − αc)^k, so ‖r_{k+1}‖ ≤ (1 − α·c_min)‖r_k‖
            let r = &solve.residuals;
            let mut worst = 0.0f64;
            for (k, &rk) in r.iter().enumerate().take_while(|(_, &x)| x > 1e-10 * r[0]) {
                let exact: Vec<f64> = g.iter().zip(&curv).map(|(g, c)| g * (1.0 - alpha * c).powi(k as i32)).collect();
                worst = worst.max((rk - norm(&exact)).abs() / r[0]);
                if let Some(&next) = r.get(k + 1).filter(|_| rk > 1e-6 * r[0]) {
                    worst = worst.max(next / rk - rate);
                }
            }
            Ok(worst)
        }),
        prop("implicit", "CG error decreases in the energy norm", 100, 1e-12, |_, rng| {
            let n = 1 + rng.below(20);
            let curv: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.uniform(-2.0, 1.0))).collect();
            let g = rng.normal_vec(n, 0.0, 1.0);
            let exact: Vec<f64> = g.iter().zip(&curv).map(|(g, c)| -g / c).collect();
            let energy = |mu: &[f64]| -> f64 {
                (0..n).map(|i| curv[i] * (mu[i] - exact[i]).powi(2)).sum()
            };
            let e0 = energy(&vec![0.0; n]);
            let mut prev = e0;
            let mut worst = 0.0f64;
            for k in 1..=n {
                let s = solve_mu(
                    &g,
                    |v| Ok(v.iter().zip(&curv).map(|(a, b)| a * b).collect()),
                    &MuSolverCfg {
                        solver: MuSolver::Cg { iterations: k },
                        hvp: HvpScheme::Exact,
                    },
                )
                .map_err(err)?;
                let e = energy(&s.mu);
                worst = worst.max((e - prev) / e0);
                prev = e;
            }
            Ok(worst.max(0.0))
        }),
    ]
}

fn theory_props() -> Vec<PropertyOutcome> {
    vec![
        prop("theory", "closed-form solutions are stationary", 100, 1e-12, |_, rng| {
            let m = random_instance(rng)?;
            let beta = rng.uniform(0.0, 1.0);
            let phi = quad_solution(&m, beta).map_err(err)?;
            let p = m.problem();
            let (_, g) = AugmentedObjective::new(&p, &m.omega, beta).eval(&phi).map_err(err)?;
            Ok(norm(&g))
        }),
        prop("theory", "error lies within its two-sided bound", 1000, 1e-12, |_, rng| {
            let m = random_instance(rng)?;
            let mut worst = 0.0f64;
            for beta in [1e-3, 1e-2, 1e-1, 1.0] {
                let e = norm(&quad_contrastive_exact(&m, beta).map_err(err)?.error);
                let (lo, hi) = quad_error_bounds(&m, beta);
                worst = worst.max((lo - e).max(e - hi).max(0.0) / hi);
            }
            Ok(worst)
        }),
        prop("theory", "default instances have the documented structure", 100, 0.0, |i, _| {
            let m = QuadSampler::default()
                .sample(&mut Rng::derive(i as u64, "quad-instance", 0))
                .map_err(err)?;
            let spectrum = (0..m.dim()).all(|k| m.h[k] == 1.0 / (k + 1) as f64);
            let finite = m
                .omega
                .iter()
                .chain(&m.phi_learn)
                .chain(&m.phi_eval)
                .all(|v| v.is_finite());
            Ok(flag(
                m.dim() == 50 && m.lambda == 0.1 && spectrum && finite && m.curvature_range() == (1.0 / 50.0, 1.0),
            ))
        }),
        prop("theory", "optimal nudging is a minimum of the bound", 100, 0.0, |_, rng| {
            let p = BoundParams {
                b_learn: rng.uniform(0.1, 2.0),
                b_eval: rng.uniform(0.1, 2.0),
                c: rng.uniform(0.5, 3.0),
                ..Default::default()
            };
            let total = rng.uniform(0.01, 0.9) * p.c / p.b_learn;
            let split = rng.uniform(0.0, 1.0);
            let (d, dn) = (total * split, total * (1.0 - split));
            let (b, at) = beta_star(&p, d, dn).map_err(err)?;
            let below = bound_b_derivative(&p, d, dn, b * (1.0 - 1e-3)).map_err(err)?;
            let above = bound_b_derivative(&p, d, dn, b * (1.0 + 1e-3)).map_err(err)?;
            let lo = bound_b(&p, d, dn, b * 0.9).map_err(err)?;
            let hi = bound_b(&p, d, dn, b * 1.1).map_err(err)?;
            Ok(flag(below < 0.0 && above > 0.0 && at <= lo && at <= hi))
        }),
    ]
}

fn tasks_props() -> Vec<PropertyOutcome> {
    vec![
        prop("tasks", "wheel optimum is the first best mean", 1000, 0.0, |i, rng| {
            let task = WheelTask::new(rng.uniform(0.0, 1.0)).map_err(err)?;
            let mut ctx = WheelTask::sample_context(rng);
            match i % 10 {
                0 => ctx[0] = 0.0,
                1 => ctx[1] = 0.0,
                _ => {}
            }
            let mut best = (1, f64::NEG_INFINITY);
            for a in 1..=N_ACTIONS {
                let v = task.mean_reward(ctx, a).map_err(err)?;
                if v > best.1 {
                    best = (a, v);
                }
            }
            Ok(flag(best.0 == task.optimal_action(ctx) && best.1 == task.optimal_mean(ctx)))
        }),
        prop("tasks", "regret ledger accumulates monotonically", 100, 0.0, |_, rng| {
            let mut ledger = RegretLedger::default();
            let mut ok = true;
            let mut prev = 0.0;
            for _ in 0..1 + rng.below(200) {
                ledger.push(rng.uniform(0.0, 50.0), rng.uniform(0.1, 40.0));
                ok &= ledger.cumulative() >= prev;
                prev = ledger.cumulative();
            }
            let trace = ledger.normalized_trace(1 + rng.below(20));
            let last = trace.last().map(|t| t.1);
            ok &= last.is_some_and(|l| (l - ledger.normalized()).abs() <= 1e-12 * l.abs().max(1.0));
            ok &= trace.last().map(|t| t.0) == Some(ledger.len());
            Ok(flag(ok))
        }),
        prop("tasks", "sinusoid targets have zero loss", 100, 0.0, |_, rng| {
            let task = sinusoid_sample(rng);
            let data = task.regression_data();
            let mut worst = 0.0f64;
            for (x, y) in [(&data.learn_x, &data.learn_y), (&data.eval_x, &data.eval_y)] {
                let preds: Vec<f64> = x.as_slice().iter().map(|&v| task.target(v)).collect();
                let preds = Mat::from_vec(preds.len(), 1, preds).map_err(err)?;
                worst = worst.max(loss_eval(LossKind::Mse, &preds, Targets::Values(y)).map_err(err)?.0);
            }
            Ok(worst)
        }),
        prop("tasks", "csv round trip is exact", 100, 0.0, |_, rng| {
            let rows = 1 + rng.below(20);
            let cols = 1 + rng.below(5);
            let vals: Vec<f64> = (0..rows * cols)
                .map(|_| rng.normal(0.0, 1.0) * 10f64.powf(rng.uniform(-5.0, 5.0)))
                .collect();
            let features = Mat::from_vec(rows, cols, vals).map_err(err)?;
            let targets = rng.normal_vec(rows, 0.0, 3.0);
            let (f2, t2) = parse_csv(&write_csv(&features, &targets), false).map_err(err)?;
            Ok(flag(bits(f2.as_slice()) == bits(features.as_slice()) && bits(&t2) == bits(&targets)))
        }),
    ]
}

fn spiking_props() -> Vec<PropertyOutcome> {
    vec![
        prop("spiking", "membranes stay bounded", 100, 0.0, |_, rng| {
            let shape = LifShape {
                inputs: 1 + rng.below(6),
                hidden: 1 + rng.below(10),
                outputs: 1 + rng.below(2),
            };
            let mut p = LifParams::kaiming(shape, rng);
            p.w_in.as_mut_slice().iter_mut().for_each(|w| *w *= 20.0);
            for w in p.w_rec.as_mut_slice() {
                *w = rng.normal(0.0, 1.0);
            }
            for j in 0..shape.hidden {
                p.w_rec.set(j, j, 0.0);
            }
            let fro = norm(p.w_rec.as_slice());
            if fro > 0.0 {
                let s = 0.9 * (1.0 - p.alpha) / fro;
                p.w_rec.as_mut_slice().iter_mut().for_each(|w| *w *= s);
            }
            let bound: Vec<f64> = (0..shape.hidden)
                .map(|j| {
                    let drive: f64 = p.w_in.row(j).iter().chain(p.w_rec.row(j)).map(|w| w.abs()).sum();
                    (drive + p.v_th) / (1.0 - p.alpha) * (1.0 + 1e-9)
                })
                .collect();
            let out_bound: Vec<f64> = (0..shape.outputs)
                .map(|k| p.w_out.row(k).iter().map(|w| w.abs()).sum::<f64>() / (1.0 - p.kappa) * (1.0 + 1e-9))
                .collect();
            let rate = rng.uniform(0.05, 0.8);
            let mut state = LifState::resting(&p);
            for _ in 0..10_000 {
                let active: Vec<usize> = (0..shape.inputs).filter(|_| rng.bernoulli(rate)).collect();
                state.step(&p, &active).map_err(err)?;
                let ok = state.h.iter().zip(&bound).all(|(h, b)| h.abs() <= *b)
                    && state.y.iter().zip(&out_bound).all(|(y, b)| y.abs() <= *b);
                if !ok {
                    return Ok(1.0);
                }
            }
            Ok(0.0)
        }),
        prop("spiking", "low-pass filtering is linear", 100, 1e-12, |_, rng| {
            let steps = 1 + rng.below(50);
            let width = 1 + rng.below(5);
            let decay = rng.uniform(0.0, 1.0);
            let a: Vec<Vec<f64>> = (0..steps).map(|_| rng.normal_vec(width, 0.0, 1.0)).collect();
            let b: Vec<Vec<f64>> = (0..steps).map(|_| rng.normal_vec(width, 0.0, 1.0)).collect();
            let twice: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
            let sum: Vec<Vec<f64>> = a.iter().zip(&b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect();
            let (fa, fb) = (low_pass(decay, &a), low_pass(decay, &b));
            let doubled = low_pass(decay, &twice).concat();
            let exact_double = fa.concat().iter().map(|v| 2.0 * v).collect::<Vec<f64>>();
            if bits(&doubled) != bits(&exact_double) {
                return Ok(1.0);
            }
            let added: Vec<f64> = fa.concat().iter().zip(fb.concat()).map(|(p, q)| p + q).collect();
            Ok(rel_diff(&low_pass(decay, &sum).concat(), &added))
        }),
        prop("spiking", "readout gradient matches finite differences", 100, 1e-6, |_, rng| {
            let (p, batch) = toy_network(rng)?;
            let g = eprop_gradients(&p, &EpropCfg::default(), &batch, false).map_err(err)?;
            let oracle = eprop_readout_oracle(&p, &batch);
            let loss = |w: &[f64]| -> f64 {
                let mut q = p.clone();
                q.w_out.as_mut_slice().copy_from_slice(w);
                let mut total = 0.0;
                for item in &batch {
                    let Ok(r) = lif_rollout(&q, &item.raster, None) else {
                        return f64::NAN;
                    };
                    total += r.prediction.iter().zip(&item.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                }
                total / batch.len() as f64
            };
            let fd = fd_gradient(&mut { loss }, p.w_out.as_slice());
            Ok(rel_diff(g.w_out.as_slice(), &fd).max(rel_diff(&oracle, &fd)))
        }),
        prop("spiking", "consolidation composes with the e-prop rule", 100, 1e-12, |_, rng| {
            let (p, batch) = toy_network(rng)?;
            let data = SpikingData {
                template: p.clone(),
                cfg: EpropCfg::default(),
                learn: batch.clone(),
                eval: batch,
            };
            let phi = p.to_flat();
            let n = phi.len();
            let mut plain = vec![0.0; n];
            let v0 = data.learn(&phi, &mut plain).map_err(err)?;
            let omega: Vec<f64> = phi.iter().map(|v| v + rng.normal(0.0, 0.1)).collect();
            let zero = SynapseProblem::new(&data, SynapseLayout::OMEGA, SynapseMeta::uniform(omega.clone(), 0.0))
                .map_err(err)?;
            let mut g = vec![0.0; n];
            let v = zero.learn(&omega, &phi, &mut g).map_err(err)?;
            if v.to_bits() != v0.to_bits() || bits(&g) != bits(&plain) {
                return Ok(1.0);
            }
            let lambda = rng.uniform(0.01, 2.0);
            let reg = SynapseProblem::new(&data, SynapseLayout::OMEGA, SynapseMeta::uniform(omega.clone(), lambda))
                .map_err(err)?;
            reg.learn(&omega, &phi, &mut g).map_err(err)?;
            let added = diff(&g, &plain);
            let want: Vec<f64> = phi.iter().zip(&omega).map(|(a, w)| lambda * (a - w)).collect();
            Ok(norm(&diff(&added, &want)) / (norm(&g) + norm(&want)))
        }),
    ]
}

fn small_quad_config(seed: u64, rng: &mut Rng) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::QuadVerify);
    cfg.seed = seed;
    if let Some(q) = cfg.quad.as_mut() {
        q.dim = 1 + rng.below(6);
        q.betas = LogGrid {
            lo: 1e-3,
            hi: 1e-1,
            per_decade: 1 + rng.below(3),
        };
        q.budgets = (0..1 + rng.below(3))
            .map(|_| if rng.bernoulli(0.3) { None } else { Some(1 + rng.below(20)) })
            .collect();
    }
    cfg
}

fn cli_props() -> Vec<PropertyOutcome> {
    vec![
        prop("cli", "quadratic runs are deterministic", 100, 0.0, |i, rng| {
            let cfg = small_quad_config(i as u64, rng);
            let text = cfg.to_json();
            let a = experiments::run(&text, &cfg);
            let b = experiments::run(&text, &cfg);
            let tsv = |r: &crate::output::RunRecord| r.tables.iter().map(|t| t.to_tsv()).collect::<Vec<_>>();
            Ok(flag(
                a.error.is_none()
                    && a.metrics_jsonl() == b.metrics_jsonl()
                    && a.summary_json() == b.summary_json()
                    && tsv(&a) == tsv(&b),
            ))
        }),
        prop("cli", "configuration is echoed byte for byte", 100, 0.0, |i, rng| {
            let cfg = small_quad_config(i as u64, rng);
            let mut text = cfg.to_json().replace(": ", if i % 2 == 0 { ":   " } else { ":" });
            text.push_str(&"\n".repeat(i % 3));
            let parsed = parse_config(&text).map_err(|e| e.to_string())?;
            let r = experiments::run(&text, &parsed);
            Ok(flag(r.config_echo == text && parsed == cfg))
        }),
        prop("cli", "error-curve table has one row per cell", 100, 0.0, |i, rng| {
            let cfg = small_quad_config(i as u64, rng);
            let q = cfg.quad.clone().ok_or("no quad section")?;
            let r = experiments::run(&cfg.to_json(), &cfg);
            let t = r.table("error_curve").ok_or("no error_curve table")?;
            let cells = q.betas.values().len() * q.budgets.len();
            Ok(flag(t.rows.len() == cells && t.to_tsv().lines().count() == cells + 1))
        }),
    ]
}

fn fd_props() -> Vec<PropertyOutcome> {
    vec![
        prop("fd", "mlp regression", 100, 1e-5, |_, rng| {
            let (n_in, n_out) = (1 + rng.below(3), 1 + rng.below(2));
            let arch = small_arch(rng, Activation::Tanh, n_in, n_out)?;
            let data = regression_data(rng, &arch)?;
            let phi = rng.normal_vec(arch.n_params(), 0.0, 0.7);
            data_loss_fd(&MlpRegression::new(arch, data).map_err(err)?, &phi)
        }),
        prop("fd", "bandit value regression", 100, 1e-5, |_, rng| {
            let arch = small_arch(rng, Activation::Tanh, 2, N_ACTIONS)?;
            let task = WheelTask::new(rng.uniform(0.0, 1.0)).map_err(err)?;
            let set = bandit_meta_dataset(&task, 5 + rng.below(15), 5 + rng.below(15), rng).map_err(err)?;
            let phi = rng.normal_vec(arch.n_params(), 0.0, 0.7);
            data_loss_fd(&BanditData::new(arch, &set).map_err(err)?, &phi)
        }),
        prop("fd", "quadratic data", 100, 1e-7, |_, rng| {
            let n = 1 + rng.below(20);
            let phi = rng.normal_vec(n, 0.0, 1.0);
            data_loss_fd(&random_quad_data(rng, n), &phi)
        }),
        prop("fd", "synapse problem and its meta-partials", 100, 1e-5, |_, rng| {
            let (n_in, n_out) = (1 + rng.below(3), 1 + rng.below(2));
            let arch = small_arch(rng, Activation::Tanh, n_in, n_out)?;
            let n = arch.n_params();
            let data = MlpRegression::new(arch.clone(), regression_data(rng, &arch)?).map_err(err)?;
            let meta = SynapseMeta {
                omega: rng.normal_vec(n, 0.0, 0.7),
                lambda: (0..n).map(|_| rng.uniform(0.5, 2.0)).collect(),
            };
            let problem = SynapseProblem::new(data, SynapseLayout::BOTH, meta.clone()).map_err(err)?;
            let theta = SynapseLayout::BOTH.pack(&meta);
            let phi = rng.normal_vec(n, 0.0, 0.7);
            let mut g = vec![0.0; n];
            problem.learn(&theta, &phi, &mut g).map_err(err)?;
            let mut scratch = vec![0.0; n];
            let fd_phi = fd_gradient(
                &mut |x| problem.learn(&theta, x, &mut scratch).unwrap_or(f64::NAN),
                &phi,
            );
            let partials = problem.learn_theta_partials(&theta, &phi).map_err(err)?;
            let fd_theta = fd_gradient(
                &mut |t| problem.learn(t, &phi, &mut scratch).unwrap_or(f64::NAN),
                &theta,
            );
            Ok(rel_diff(&g, &fd_phi).max(rel_diff(&partials, &fd_theta)))
        }),
        prop("fd", "modulation problem", 100, 1e-5, |_, rng| {
            let arch = small_arch(rng, Activation::Tanh, 1, 1)?;
            let data = regression_data(rng, &arch)?;
            let off = arch.layer_offset(arch.n_layers() - 1);
            let all = rng.normal_vec(arch.n_params(), 0.0, 0.7);
            let problem = ModulationProblem::new(arch.clone(), data, all[off..].to_vec()).map_err(err)?;
            let theta = all[..off].to_vec();
            let mut phi = random_modulation(rng, &arch)?.to_flat();
            phi.extend(rng.normal_vec(all.len() - off, 0.0, 0.7));
            let beta = rng.uniform(-1.0, 1.0);
            let k = problem.fast_dim();
            let mut scratch = vec![0.0; k];
            let mut g = vec![0.0; k];
            problem.learn(&theta, &phi, &mut g).map_err(err)?;
            let fd_phi = fd_gradient(
                &mut |x| problem.learn(&theta, x, &mut scratch).unwrap_or(f64::NAN),
                &phi,
            );
            let partials = modulation_theta_partials(&problem, &theta, &phi, beta).map_err(err)?;
            let fd_theta = fd_gradient(
                &mut |t| {
                    AugmentedObjective::new(&problem, t, beta)
                        .eval(&phi)
                        .map_or(f64::NAN, |(v, _)| v)
                },
                &theta,
            );
            Ok(rel_diff(&g, &fd_phi).max(rel_diff(&partials, &fd_theta)))
        }),
        prop("fd", "loss functions", 100, 1e-6, |_, rng| {
            let rows = 1 + rng.below(5);
            let cols = 2 + rng.below(4);
            let preds = random_mat(rng, rows, cols, 1.0)?;
            let values = random_mat(rng, rows, cols, 1.0)?;
            let classes: Vec<usize> = (0..rows).map(|_| rng.below(cols)).collect();
            let mut onehot = Mat::zeros(rows, cols);
            for (r, &c) in classes.iter().enumerate() {
                onehot.set(r, c, 1.0);
            }
            let mut mask = Mat::zeros(rows, cols);
            for (r, &c) in classes.iter().enumerate() {
                mask.set(r, c, 1.0);
            }
            let as_mat = |x: &[f64]| Mat::from_vec(rows, cols, x.to_vec()).expect("shape");
            let cases: [&LossFn; 4] = [
                &|p| loss_eval(LossKind::Mse, p, Targets::Values(&values)),
                &|p| loss_eval(LossKind::CrossEntropy, p, Targets::Values(&onehot)),
                &|p| loss_eval(LossKind::CrossEntropy, p, Targets::Classes(&classes)),
                &|p| masked_mse(p, &values, &mask),
            ];
            let mut worst = 0.0f64;
            for case in cases {
                let (_, g) = case(&preds).map_err(err)?;
                let fd = fd_gradient(
                    &mut |x| case(&as_mat(x)).map_or(f64::NAN, |(v, _)| v),
                    preds.as_slice(),
                );
                worst = worst.max(rel_diff(g.as_slice(), &fd));
            }
            Ok(worst)
        }),
    ]
}
