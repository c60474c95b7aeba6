use serde::{Deserialize, Serialize};

use super::products::{cross_dvp, hvp, power_iteration, HvpScheme};
use crate::bilevel::{
    polish_newton, solve_phase, AugmentedObjective, BilevelProblem, MetaGradientEstimator, PhaseBudget, TaskEstimate,
};
use crate::error::{check_len, Error, Result};
use crate::numkit::{axpy, dot, norm, OptimSpec};

/// Approximation scheme for `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuSolver {
    /// Replace the inverse Hessian by the identity.
    Identity,
    /// `iterations` steps of `μ ← μ − α(μH + g)` from `μ = 0`. `alpha`
    /// defaults to `1/L̂` with `L̂` from 10 power iterations.
    Neumann { alpha: Option<f64>, iterations: usize },
    /// Conjugate gradients on `μH = −g`.
    Cg { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSolverCfg {
    pub solver: MuSolver,
    pub hvp: HvpScheme,
}

impl MuSolverCfg {
    pub fn validate(&self) -> Result<()> {
        match self.solver {
            MuSolver::Identity => {}
            MuSolver::Neumann { alpha, iterations } => {
                if iterations == 0 {
                    return Err(Error::contract("Neumann solver needs at least one iteration"));
                }
                if alpha.is_some_and(|a| !(a > 0.0)) {
                    return Err(Error::contract("Neumann step must be positive"));
                }
            }
            MuSolver::Cg { iterations } => {
                if iterations == 0 {
                    return Err(Error::contract("CG solver needs at least one iteration"));
                }
            }
        }
        if let HvpScheme::FiniteDifference { step: Some(h) } = self.hvp {
            if !(h > 0.0) {
                return Err(Error::contract("finite-difference step must be positive"));
            }
        }
        Ok(())
    }
}

/// Result of [`solve_mu`].
#[derive(Debug, Clone, PartialEq)]
pub struct MuSolve {
    pub mu: Vec<f64>,
    pub iterations: usize,
    /// Set when CG met a direction of non-positive curvature; `mu` is the
    /// iterate reached before it.
    pub breakdown: bool,
    /// Residual norms `‖μH + g‖`, starting from `μ = 0`.
    pub residuals: Vec<f64>,
}

/// Approximates `μ = −g·H⁻¹` for a symmetric `H` given through `hvp`.
pub fn solve_mu(grad_eval: &[f64], mut hvp: impl FnMut(&[f64]) -> Result<Vec<f64>>, cfg: &MuSolverCfg) -> Result<MuSolve> {
    cfg.validate()?;
    let n = grad_eval.len();
    let g0 = norm(grad_eval);
    match cfg.solver {
        MuSolver::Identity => Ok(MuSolve {
            mu: grad_eval.iter().map(|g| -g).collect(),
            iterations: 0,
            breakdown: false,
            residuals: vec![g0],
        }),
        MuSolver::Neumann { alpha, iterations } => {
            let alpha = match alpha {
                Some(a) => a,
                None => {
                    let l = power_iteration(n, 10, &mut hvp)?;
                    if !(l > 0.0) {
                        return Err(Error::Domain("estimated curvature is not positive".into()));
                    }
                    1.0 / l
                }
            };
            let mut mu = vec![0.0; n];
            let mut residuals = vec![g0];
            for _ in 0..iterations {
                let mut r = hvp(&mu)?;
                axpy(1.0, grad_eval, &mut r);
                axpy(-alpha, &r, &mut mu);
                let mut res = hvp(&mu)?;
                axpy(1.0, grad_eval, &mut res);
                residuals.push(norm(&res));
            }
            Ok(MuSolve {
                mu,
                iterations,
                breakdown: false,
                residuals,
            })
        }
        MuSolver::Cg { iterations } => {
            let mut mu = vec![0.0; n];
            let mut r: Vec<f64> = grad_eval.iter().map(|g| -g).collect();
            let mut p = r.clone();
            let mut rr = dot(&r, &r);
            let mut residuals = vec![rr.sqrt()];
            let mut done = 0;
            let mut breakdown = false;
            while done < iterations && rr > 0.0 {
                let hp = hvp(&p)?;
                let curv = dot(&p, &hp);
                if !(curv > 0.0) {
                    breakdown = true;
                    break;
                }
                let a = rr / curv;
                axpy(a, &p, &mut mu);
                axpy(-a, &hp, &mut r);
                let rr_next = dot(&r, &r);
                residuals.push(rr_next.sqrt());
                let b = rr_next / rr;
                for (pi, ri) in p.iter_mut().zip(&r) {
                    *pi = ri + b * *pi;
                }
                rr = rr_next;
                done += 1;
            }
            Ok(MuSolve {
                mu,
                iterations: done,
                breakdown,
                residuals,
            })
        }
    }
}

/// An implicit meta-gradient with its solver report.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitEstimate {
    /// Estimated `∇θ`.
    pub grad: Vec<f64>,
    pub solve: MuSolve,
    /// Set when CG broke down and the identity solver was used instead.
    pub fallback: bool,
}

/// `∂θL_eval(φ̂, θ) + μ̂·∂φ∂θL_learn(φ̂, θ)`.
pub fn implicit_meta_gradient<P: BilevelProblem + ?Sized>(
    problem: &P,
    theta: &[f64],
    phi: &[f64],
    cfg: &MuSolverCfg,
) -> Result<ImplicitEstimate> {
    check_len("implicit φ", problem.fast_dim(), phi.len())?;
    let mut g = vec![0.0; phi.len()];
    problem.eval(theta, phi, &mut g)?;
    let products = |v: &[f64]| hvp(problem, theta, phi, v, cfg.hvp);
    let mut solve = solve_mu(&g, products, cfg)?;
    let mut fallback = false;
    if solve.breakdown {
        let identity = MuSolverCfg {
            solver: MuSolver::Identity,
            ..*cfg
        };
        let mut id = solve_mu(&g, |_: &[f64]| Ok(vec![]), &identity)?;
        id.breakdown = true;
        id.iterations = solve.iterations;
        solve = id;
        fallback = true;
    }
    let mut grad = problem.eval_theta_partials(theta, phi)?;
    let cross = cross_dvp(problem, theta, phi, &solve.mu)?;
    check_len("implicit cross product", grad.len(), cross.len())?;
    axpy(1.0, &cross, &mut grad);
    Ok(ImplicitEstimate { grad, solve, fallback })
}

/// Free phase followed by an implicit meta-gradient, as a drop-in for the
/// contrastive estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitEstimator {
    pub solver: MuSolverCfg,
    pub free_budget: PhaseBudget,
    pub free_optim: OptimSpec,
    pub newton_polish: Option<PhaseBudget>,
}

impl MetaGradientEstimator for ImplicitEstimator {
    fn estimate<P: BilevelProblem>(&self, problem: &P, theta: &[f64], init: Vec<f64>) -> Result<TaskEstimate> {
        let obj = AugmentedObjective::new(problem, theta, 0.0);
        let mut free = solve_phase(&obj, init, self.free_optim, self.free_budget)?;
        if let Some(polish) = self.newton_polish {
            free = polish_newton(&obj, free, polish)?;
        }
        let est = implicit_meta_gradient(problem, theta, &free.phi, &self.solver)?;
        Ok(TaskEstimate {
            delta: est.grad.iter().map(|g| -g).collect(),
            free,
            second: vec![],
            fallback: est.fallback,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{stats::linear_slope, Rng};
    use crate::theory::{quad_meta_gradient, quad_solution, QuadModel, QuadSampler};

    fn scalar_h(v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.iter().map(|x| 2.0 * x).collect())
    }

    fn cfg(solver: MuSolver) -> MuSolverCfg {
        MuSolverCfg {
            solver,
            hvp: HvpScheme::Exact,
        }
    }

    #[test]
    fn scalar_solves() {
        let g = [-1.5];
        let cg = solve_mu(&g, scalar_h, &cfg(MuSolver::Cg { iterations: 1 })).unwrap();
        assert_eq!(cg.mu, vec![0.75]);
        let id = solve_mu(&g, scalar_h, &cfg(MuSolver::Identity)).unwrap();
        assert_eq!(id.mu, vec![1.5]);
        let ne = solve_mu(
            &g,
            scalar_h,
            &cfg(MuSolver::Neumann {
                alpha: Some(0.25),
                iterations: 60,
            }),
        )
        .unwrap();
        assert!((ne.mu[0] - 0.75).abs() < 1e-15);
        // contraction 1 − 0.25·2 = 0.5 per step
        for w in ne.residuals.windows(2).take(20) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_gives_zero_mu() {
        for solver in [
            MuSolver::Identity,
            MuSolver::Neumann {
                alpha: None,
                iterations: 5,
            },
            MuSolver::Cg { iterations: 5 },
        ] {
            let s = solve_mu(&[0.0, 0.0], scalar_h, &cfg(solver)).unwrap();
            assert_eq!(s.mu, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            MuSolver::Cg { iterations: 0 },
            MuSolver::Neumann {
                alpha: Some(-1.0),
                iterations: 3,
            },
            MuSolver::Neumann {
                alpha: None,
                iterations: 0,
            },
        ];
        for solver in bad {
            assert!(cfg(solver).validate().is_err());
        }
        let fd = MuSolverCfg {
            solver: MuSolver::Identity,
            hvp: HvpScheme::FiniteDifference { step: Some(0.0) },
        };
        assert!(fd.validate().is_err());
    }

    #[test]
    fn cg_breakdown_is_flagged() {
        let indefinite = |v: &[f64]| Ok(vec![v[0], -v[1]]);
        let s = solve_mu(&[0.0, 1.0], indefinite, &cfg(MuSolver::Cg { iterations: 5 })).unwrap();
        assert!(s.breakdown);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn one_dimensional_meta_gradients() {
        let m = QuadModel::new(vec![1.0], vec![1.0], vec![2.0], 1.0, vec![0.0]).unwrap();
        let p = m.problem();
        let phi = quad_solution(&m, 0.0).unwrap();
        let exact = implicit_meta_gradient(&p, &m.omega, &phi, &cfg(MuSolver::Cg { iterations: 1 })).unwrap();
        assert_eq!(exact.grad, vec![-0.75]);
        let t1t2 = implicit_meta_gradient(&p, &m.omega, &phi, &cfg(MuSolver::Identity)).unwrap();
        assert_eq!(t1t2.grad, vec![-1.5]);
        // at φ = φᵉ both the eval gradient and the meta-gradient vanish
        let still = implicit_meta_gradient(&p, &m.omega, &[2.0], &cfg(MuSolver::Cg { iterations: 1 })).unwrap();
        assert_eq!(still.grad, vec![0.0]);
    }

    #[test]
    fn solvers_reproduce_oracle() {
        let mut rng = Rng::new(31);
        for _ in 0..10 {
            let m = QuadSampler::default().sample(&mut rng).unwrap();
            let p = m.problem();
            let phi = quad_solution(&m, 0.0).unwrap();
            let truth = quad_meta_gradient(&m);
            let scale = norm(&truth);
            for solver in [
                MuSolver::Cg { iterations: m.dim() },
                MuSolver::Neumann {
                    alpha: None,
                    iterations: 500,
                },
            ] {
                let est = implicit_meta_gradient(&p, &m.omega, &phi, &cfg(solver)).unwrap();
                let err: Vec<f64> = est.grad.iter().zip(&truth).map(|(a, b)| a - b).collect();
                assert!(norm(&err) <= 1e-8 * scale, "{solver:?}: {}", norm(&err) / scale);
            }
        }
    }

    #[test]
    fn neumann_rate_matches_spectral_factor() {
        let m = QuadSampler {
            dim: 10,
            ..Default::default()
        }
        .sample(&mut Rng::new(2))
        .unwrap();
        let p = m.problem();
        let phi = quad_solution(&m, 0.0).unwrap();
        let mut g = vec![0.0; m.dim()];
        p.eval(&m.omega, &phi, &mut g).unwrap();
        let alpha = 0.5;
        let s = solve_mu(
            &g,
            |v| hvp(&p, &m.omega, &phi, v, HvpScheme::Exact),
            &cfg(MuSolver::Neumann {
                alpha: Some(alpha),
                iterations: 200,
            }),
        )
        .unwrap();
        let (lo, hi) = m.curvature_range();
        let factor = (1.0 - alpha * (lo + m.lambda)).abs().max((1.0 - alpha * (hi + m.lambda)).abs());
        let ks: Vec<f64> = (100..200).map(|k| k as f64).collect();
        let logs: Vec<f64> = (100..200).map(|k| s.residuals[k].ln()).collect();
        let slope = linear_slope(&ks, &logs);
        assert!((slope / factor.ln() - 1.0).abs() < 0.1, "{slope} vs {}", factor.ln());
    }

    #[test]
    fn cg_energy_error_is_monotone() {
        let m = QuadSampler::default().sample(&mut Rng::new(4)).unwrap();
        let p = m.problem();
        let phi = quad_solution(&m, 0.0).unwrap();
        let mut g = vec![0.0; m.dim()];
        p.eval(&m.omega, &phi, &mut g).unwrap();
        let diag: Vec<f64> = m.h.iter().map(|h| h + m.lambda).collect();
        let exact: Vec<f64> = g.iter().zip(&diag).map(|(g, d)| -g / d).collect();
        let mut last = f64::INFINITY;
        for k in 1..=m.dim() {
            let s = solve_mu(&g, |v| hvp(&p, &m.omega, &phi, v, HvpScheme::Exact), &cfg(MuSolver::Cg { iterations: k })).unwrap();
            let e: f64 = (0..m.dim()).map(|i| diag[i] * (s.mu[i] - exact[i]).powi(2)).sum();
            assert!(e <= last * (1.0 + 1e-12) + 1e-300);
            last = e;
        }
    }
}
