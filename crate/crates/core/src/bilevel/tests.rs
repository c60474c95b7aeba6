use super::*;
use crate::error::{Error, Result};
use crate::numkit::{norm, stats::loglog_slope, OptimSpec, Rng};
use crate::theory::{quad_contrastive_exact, quad_meta_gradient, quad_solution, QuadModel, QuadSampler};

/// `L_learn = ½(φ − a)²`, `L_eval = ½(φ − b)²`, with constant `θ`-partials.
struct Scalar {
    a: f64,
    b: f64,
    learn_partial: Vec<f64>,
    eval_partial: Vec<f64>,
}

impl Scalar {
    fn new(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            learn_partial: vec![0.0],
            eval_partial: vec![0.0],
        }
    }
}

impl BilevelProblem for Scalar {
    fn fast_dim(&self) -> usize {
        1
    }
    fn meta_dim(&self) -> usize {
        self.learn_partial.len()
    }
    fn learn(&self, _: &[f64], phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        grad[0] = phi[0] - self.a;
        Ok(0.5 * grad[0] * grad[0])
    }
    fn eval(&self, _: &[f64], phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        grad[0] = phi[0] - self.b;
        Ok(0.5 * grad[0] * grad[0])
    }
    fn learn_theta_partials(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
        Ok(self.learn_partial.clone())
    }
    fn eval_theta_partials(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_partial.clone())
    }
    fn initial_fast(&self, _: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
}

fn unit_quad() -> QuadModel {
    QuadModel::new(vec![1.0], vec![1.0], vec![2.0], 1.0, vec![0.0]).unwrap()
}

fn exact(m: &QuadModel, beta: f64) -> PhaseResult {
    PhaseResult {
        phi: quad_solution(m, beta).unwrap(),
        beta,
        steps: 0,
        grad_norm: 0.0,
        value: 0.0,
    }
}

#[test]
fn augmented_hand_values() {
    let p = Scalar::new(1.0, 2.0);
    let (v, g) = AugmentedObjective::new(&p, &[0.0], 1.0).eval(&[0.0]).unwrap();
    assert_eq!((v, g), (2.5, vec![-3.0]));
    let (v0, _) = AugmentedObjective::new(&p, &[0.0], 0.0).eval(&[0.0]).unwrap();
    assert_eq!(v0, 0.5);
}

#[test]
fn augmented_value_is_affine_in_beta() {
    let mut rng = Rng::new(4);
    let m = QuadSampler {
        dim: 6,
        ..Default::default()
    }
    .sample(&mut rng)
    .unwrap();
    let p = m.problem();
    for _ in 0..100 {
        let phi = rng.normal_vec(6, 0.0, 2.0);
        let (b1, b2) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let v = |b: f64| AugmentedObjective::new(&p, &m.omega, b).eval(&phi).unwrap().0;
        let lhs = v(b1) + v(b2);
        let rhs = v(0.0) + v(b1 + b2);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}

#[test]
fn augmented_rejects_wrong_shape() {
    let p = Scalar::new(1.0, 2.0);
    let err = AugmentedObjective::new(&p, &[0.0], 1.0).eval(&[0.0, 1.0]).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
}

#[test]
fn free_phase_converges_to_closed_form() {
    let m = unit_quad();
    let p = m.problem();
    let obj = AugmentedObjective::new(&p, &m.omega, 0.0);
    let r = solve_phase(&obj, vec![0.0], OptimSpec::gd(0.3), PhaseBudget::steps(200)).unwrap();
    assert!((r.phi[0] - 0.5).abs() < 1e-6);
    assert_eq!(r.steps, 200);
}

#[test]
fn phase_budget_contract() {
    let p = Scalar::new(1.0, 2.0);
    let obj = AugmentedObjective::new(&p, &[0.0], 0.0);
    assert!(matches!(
        solve_phase(&obj, vec![0.0], OptimSpec::gd(0.5), PhaseBudget::steps(0)),
        Err(Error::Contract(_))
    ));
    let r = solve_phase(&obj, vec![0.0], OptimSpec::gd(0.5), PhaseBudget::steps(1)).unwrap();
    assert_eq!(r.steps, 1);
    assert_eq!(r.phi, vec![0.5]);
    assert_eq!(r.grad_norm, 0.5);
}

#[test]
fn phase_stops_at_tolerance() {
    let p = Scalar::new(1.0, 2.0);
    let obj = AugmentedObjective::new(&p, &[0.0], 0.0);
    let budget = PhaseBudget {
        max_steps: 10_000,
        grad_tol: 1e-3,
    };
    let r = solve_phase(&obj, vec![0.0], OptimSpec::gd(0.5), budget).unwrap();
    assert!(r.grad_norm <= 1e-3 && r.steps < 20);
}

#[test]
fn phase_is_deterministic() {
    let m = QuadSampler::default().sample(&mut Rng::new(9)).unwrap();
    let p = m.problem();
    let obj = AugmentedObjective::new(&p, &m.omega, 0.3);
    let run = || solve_phase(&obj, m.omega.clone(), OptimSpec::adam(0.01), PhaseBudget::steps(50)).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn phase_reports_divergence_with_step() {
    let p = Scalar::new(1.0, 2.0);
    let obj = AugmentedObjective::new(&p, &[0.0], 0.0);
    let err = solve_phase(&obj, vec![0.0], OptimSpec::gd(1e155), PhaseBudget::steps(50)).unwrap_err();
    assert!(matches!(err, Error::Numeric { step, .. } if step > 0), "{err:?}");
}

#[test]
fn newton_polish_reaches_tight_tolerance() {
    let m = QuadSampler {
        dim: 5,
        ..Default::default()
    }
    .sample(&mut Rng::new(2))
    .unwrap();
    let p = m.problem();
    let obj = AugmentedObjective::new(&p, &m.omega, 0.5);
    let rough = solve_phase(&obj, m.omega.clone(), OptimSpec::gd(0.5), PhaseBudget::steps(3)).unwrap();
    let budget = PhaseBudget {
        max_steps: 10,
        grad_tol: 1e-12,
    };
    let fine = polish_newton(&obj, rough, budget).unwrap();
    assert!(fine.grad_norm <= 1e-12, "{}", fine.grad_norm);
}

#[test]
fn contrastive_delta_hand_value() {
    let d = contrastive_delta(&[1.0], &[0.8], 0.5).unwrap();
    assert!((d[0] + 0.4).abs() < 1e-15);
    assert_eq!(contrastive_delta(&[0.3, 2.0], &[0.3, 2.0], 0.1).unwrap(), vec![0.0, 0.0]);
    assert!(contrastive_delta(&[1.0], &[0.8], 0.0).is_err());
    assert!(contrastive_delta(&[1.0], &[0.8], -0.5).is_err());
}

#[test]
fn oracle_forward_update() {
    let m = unit_quad();
    let d = contrastive_update(&m.problem(), &m.omega, &exact(&m, 0.0), &exact(&m, 1.0)).unwrap();
    assert_eq!(d, vec![0.5]);
}

#[test]
fn update_phase_contracts() {
    let m = unit_quad();
    let p = m.problem();
    assert!(contrastive_update(&p, &m.omega, &exact(&m, 0.5), &exact(&m, 1.0)).is_err());
    assert!(symmetric_update(&p, &m.omega, &exact(&m, 0.5), &exact(&m, -0.4)).is_err());
    assert!(symmetric_update(&p, &m.omega, &exact(&m, 0.5), &exact(&m, -0.5)).is_ok());
}

#[test]
fn symmetric_with_identical_phases_is_zero() {
    let p = Scalar::new(1.0, 2.0);
    let r = |beta| PhaseResult {
        phi: vec![0.7],
        beta,
        steps: 1,
        grad_norm: 0.0,
        value: 0.0,
    };
    assert_eq!(symmetric_update(&p, &[0.0], &r(0.2), &r(-0.2)).unwrap(), vec![0.0]);
}

#[test]
fn forward_error_matches_closed_form() {
    let mut rng = Rng::new(21);
    for _ in 0..50 {
        let m = QuadSampler::default().sample(&mut rng).unwrap();
        let beta = 10f64.powf(rng.uniform(-2.0, 0.0));
        let d = contrastive_update(&m.problem(), &m.omega, &exact(&m, 0.0), &exact(&m, beta)).unwrap();
        let g = quad_meta_gradient(&m);
        let c = quad_contrastive_exact(&m, beta).unwrap();
        let scale = norm(&g);
        for i in 0..m.dim() {
            assert!(((g[i] + d[i]) - c.error[i]).abs() <= 1e-10 * scale);
        }
    }
}

fn bias(m: &QuadModel, beta: f64, variant: Variant) -> f64 {
    let p = m.problem();
    let d = match variant {
        Variant::Forward => contrastive_update(&p, &m.omega, &exact(m, 0.0), &exact(m, beta)),
        Variant::Symmetric => symmetric_update(&p, &m.omega, &exact(m, beta), &exact(m, -beta)),
    }
    .unwrap();
    let g = quad_meta_gradient(m);
    norm(&g.iter().zip(&d).map(|(g, d)| g + d).collect::<Vec<_>>())
}

#[test]
fn symmetric_bias_is_second_order() {
    let m = unit_quad();
    for beta in [0.1, 0.05, 0.02] {
        let ratio = bias(&m, beta, Variant::Symmetric) / bias(&m, beta / 2.0, Variant::Symmetric);
        assert!((ratio - 4.0).abs() < 0.1, "{ratio}");
    }
}

#[test]
fn order_of_accuracy_slopes() {
    let m = QuadSampler::default().sample(&mut Rng::new(1)).unwrap();
    let betas = crate::numkit::stats::log_grid(1e-3, 1e-1, 5);
    let fwd: Vec<f64> = betas.iter().map(|&b| bias(&m, b, Variant::Forward)).collect();
    let sym: Vec<f64> = betas.iter().map(|&b| bias(&m, b, Variant::Symmetric)).collect();
    let s1 = loglog_slope(&betas, &fwd);
    let s2 = loglog_slope(&betas, &sym);
    assert!((s1 - 1.0).abs() < 0.15, "{s1}");
    assert!((s2 - 2.0).abs() < 0.2, "{s2}");
}

#[test]
fn symmetric_and_forward_agree_as_beta_vanishes() {
    let m = unit_quad();
    let p = m.problem();
    let mut last = f64::INFINITY;
    for beta in [0.1, 0.01, 0.001] {
        let f = contrastive_update(&p, &m.omega, &exact(&m, 0.0), &exact(&m, beta)).unwrap();
        let s = symmetric_update(&p, &m.omega, &exact(&m, beta), &exact(&m, -beta)).unwrap();
        let gap = (f[0] - s[0]).abs();
        assert!(gap < last);
        last = gap;
    }
    assert!(last < 1e-3);
}

fn config(variant: Variant, beta: f64, steps: usize, lr: f64) -> ContrastiveConfig {
    ContrastiveConfig {
        variant,
        beta,
        free_budget: PhaseBudget::steps(steps),
        nudged_budget: PhaseBudget::steps(steps),
        free_optim: OptimSpec::gd(lr),
        nudged_optim: OptimSpec::gd(lr),
        newton_polish: None,
    }
}

#[test]
fn estimator_runs_warm_started_phases() {
    let m = unit_quad();
    let est = ContrastiveEstimator::new(config(Variant::Symmetric, 0.5, 300, 0.3));
    let out = est.estimate(&m.problem(), &m.omega, m.omega.clone()).unwrap();
    assert_eq!(out.second.len(), 2);
    assert_eq!(out.second[0].beta, 0.5);
    assert_eq!(out.second[1].beta, -0.5);
    let want = symmetric_update(&m.problem(), &m.omega, &exact(&m, 0.5), &exact(&m, -0.5)).unwrap();
    assert!((out.delta[0] - want[0]).abs() < 1e-9);
}

fn constant_task(u: f64) -> Scalar {
    Scalar {
        a: 0.0,
        b: 0.0,
        learn_partial: vec![0.0, 0.0],
        eval_partial: vec![u, -2.0 * u],
    }
}

#[test]
fn meta_step_with_zero_delta_keeps_theta() {
    let mut state = MetaState::new(vec![1.0, 2.0], OptimSpec::gd(0.1));
    let est = ContrastiveEstimator::new(config(Variant::Forward, 0.1, 5, 0.1));
    meta_step(&mut state, &[constant_task(0.0)], &est, &FreeInit::Problem).unwrap();
    assert_eq!(state.theta(), &[1.0, 2.0]);
    assert_eq!(state.step(), 1);
}

#[test]
fn opposite_tasks_cancel() {
    let mut state = MetaState::new(vec![1.0, 2.0], OptimSpec::gd(0.1));
    let est = ContrastiveEstimator::new(config(Variant::Forward, 0.1, 5, 0.1));
    let diag = meta_step(&mut state, &[constant_task(0.5), constant_task(-0.5)], &est, &FreeInit::Problem).unwrap();
    assert_eq!(state.theta(), &[1.0, 2.0]);
    assert_eq!(diag.tasks.len(), 2);
    assert_eq!(diag.delta_norm, 0.0);
}

#[test]
fn outer_step_follows_negative_delta() {
    // Δθ = −u, so plain GD moves θ by lr·Δθ.
    let mut state = MetaState::new(vec![0.0, 0.0], OptimSpec::gd(0.1));
    let est = ContrastiveEstimator::new(config(Variant::Forward, 0.1, 1, 0.1));
    meta_step(&mut state, &[constant_task(1.0)], &est, &FreeInit::Problem).unwrap();
    assert!((state.theta()[0] + 0.1).abs() < 1e-15);
    assert!((state.theta()[1] - 0.2).abs() < 1e-15);
}

#[test]
fn empty_batch_rejected() {
    let mut state = MetaState::new(vec![0.0], OptimSpec::gd(0.1));
    let est = ContrastiveEstimator::new(config(Variant::Forward, 0.1, 1, 0.1));
    let batch: Vec<Scalar> = vec![];
    assert!(meta_step(&mut state, &batch, &est, &FreeInit::Problem).is_err());
}

#[test]
fn task_errors_carry_the_index() {
    let mut state = MetaState::new(vec![0.0, 0.0], OptimSpec::gd(0.1));
    let est = ContrastiveEstimator::new(config(Variant::Forward, 0.1, 5, 1e300));
    let mut bad = constant_task(0.0);
    bad.a = 1e10;
    let err = meta_step(&mut state, &[constant_task(0.0), bad], &est, &FreeInit::Problem).unwrap_err();
    assert!(matches!(err, Error::Task { task: 1, .. }), "{err:?}");
}

#[test]
fn meta_training_descends_on_the_oracle() {
    let m = QuadSampler {
        dim: 5,
        lambda: 1.0,
        ..Default::default()
    }
    .sample(&mut Rng::new(6))
    .unwrap();
    let est = ContrastiveEstimator::new(config(Variant::Forward, 0.01, 400, 0.4));
    let mut state = MetaState::new(m.omega.clone(), OptimSpec::gd(0.1));
    let grad_at = |omega: &[f64]| {
        let mut mm = m.clone();
        mm.omega = omega.to_vec();
        norm(&quad_meta_gradient(&mm))
    };
    let start = grad_at(state.theta());
    for _ in 0..50 {
        let mut task = m.clone();
        task.omega = state.theta().to_vec();
        let before = grad_at(state.theta());
        meta_step(&mut state, &[task.problem()], &est, &FreeInit::Problem).unwrap();
        assert!(grad_at(state.theta()) < before);
    }
    assert!(grad_at(state.theta()) < 0.5 * start);
}

#[test]
fn polyak_average_tracks_mean() {
    let mut state = MetaState::new(vec![0.0, 0.0], OptimSpec::gd(1.0)).with_polyak(3);
    let est = ContrastiveEstimator::new(config(Variant::Forward, 0.1, 1, 0.1));
    let mut snapshots = vec![];
    for k in 1..=6 {
        assert_eq!(state.averaged_theta().len(), 2);
        meta_step(&mut state, &[constant_task(1.0)], &est, &FreeInit::Problem).unwrap();
        if k < 3 {
            assert_eq!(state.averaged_theta(), state.theta());
        } else {
            snapshots.push(state.theta()[0]);
        }
    }
    let mean = snapshots.iter().sum::<f64>() / snapshots.len() as f64;
    assert!((state.averaged_theta()[0] - mean).abs() < 1e-12);
}

#[test]
fn fixed_init_is_used() {
    let m = unit_quad();
    let est = ContrastiveEstimator::new(config(Variant::Forward, 0.5, 1, 0.1));
    let mut state = MetaState::new(m.omega.clone(), OptimSpec::gd(0.0));
    let d = meta_step(&mut state, &[m.problem()], &est, &FreeInit::Fixed(vec![0.5])).unwrap();
    // one GD step from the exact free solution stays there
    assert!(d.tasks[0].free_grad_norm < 1e-15);
}
