use serde::{Deserialize, Serialize};

use crate::bilevel::BilevelProblem;
use crate::error::{check_len, Error, Result};
use crate::numkit::{all_finite, max_abs, norm};

/// How Hessian-vector products are formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpScheme {
    /// The model's closed form; errors if it has none.
    Exact,
    /// Central differences of the gradient. `step` defaults to
    /// `1e-4·(1 + ‖φ‖∞)`.
    FiniteDifference { step: Option<f64> },
}

fn fd_step(phi: &[f64], step: Option<f64>) -> f64 {
    step.unwrap_or(1e-4 * (1.0 + max_abs(phi)))
}

fn learn_grad<P: BilevelProblem + ?Sized>(p: &P, theta: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; phi.len()];
    p.learn(theta, phi, &mut g)?;
    Ok(g)
}

fn shifted(phi: &[f64], v: &[f64], h: f64) -> Vec<f64> {
    phi.iter().zip(v).map(|(p, v)| p + h * v).collect()
}

/// `∂²φL_learn(φ, θ)·v`.
pub fn hvp<P: BilevelProblem + ?Sized>(
    problem: &P,
    theta: &[f64],
    phi: &[f64],
    v: &[f64],
    scheme: HvpScheme,
) -> Result<Vec<f64>> {
    check_len("hvp v", phi.len(), v.len())?;
    let out = match scheme {
        HvpScheme::Exact => problem
            .hvp_exact(theta, phi, v)
            .ok_or_else(|| Error::contract("model has no closed-form Hessian-vector product"))??,
        HvpScheme::FiniteDifference { step } => {
            let h = fd_step(phi, step);
            if !(h > 0.0) {
                return Err(Error::contract("finite-difference step must be positive"));
            }
            let up = learn_grad(problem, theta, &shifted(phi, v, h))?;
            let dn = learn_grad(problem, theta, &shifted(phi, v, -h))?;
            up.iter().zip(&dn).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        }
    };
    if !all_finite(&out) {
        return Err(Error::Numeric {
            context: "Hessian-vector product",
            step: 0,
        });
    }
    Ok(out)
}

/// `μ·∂φ∂θL_learn(φ, θ)`, in closed form when the model provides it and by
/// central differences of `∂θL_learn` along `μ` otherwise.
pub fn cross_dvp<P: BilevelProblem + ?Sized>(problem: &P, theta: &[f64], phi: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
    check_len("cross-derivative μ", phi.len(), mu.len())?;
    if let Some(exact) = problem.cross_dvp_exact(theta, phi, mu) {
        return exact;
    }
    let scale = norm(mu);
    if scale == 0.0 {
        return Ok(vec![0.0; problem.meta_dim()]);
    }
    // difference along the unit direction, then rescale
    let dir: Vec<f64> = mu.iter().map(|m| m / scale).collect();
    let h = fd_step(phi, None);
    let up = problem.learn_theta_partials(theta, &shifted(phi, &dir, h))?;
    let dn = problem.learn_theta_partials(theta, &shifted(phi, &dir, -h))?;
    Ok(up.iter().zip(&dn).map(|(a, b)| scale * (a - b) / (2.0 * h)).collect())
}

/// Largest Hessian eigenvalue estimate after `iters` power iterations from
/// the all-ones direction.
pub fn power_iteration(dim: usize, iters: usize, mut hvp: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<f64> {
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let w = hvp(&v)?;
        let n = norm(&w);
        if n == 0.0 {
            return Ok(0.0);
        }
        est = n;
        v = w.iter().map(|x| x / n).collect();
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;
    use crate::synapse::{DataLoss, SynapseLayout, SynapseMeta, SynapseProblem};
    use crate::theory::{QuadModel, QuadSampler};

    #[test]
    fn hand_hessian() {
        let m = QuadModel::new(vec![1.0], vec![1.0], vec![0.0], 1.0, vec![0.0]).unwrap();
        let p = m.problem();
        assert_eq!(hvp(&p, &[0.0], &[0.3], &[1.0], HvpScheme::Exact).unwrap(), vec![2.0]);
        assert_eq!(hvp(&p, &[0.0], &[0.3], &[0.0], HvpScheme::Exact).unwrap(), vec![0.0]);
    }

    #[test]
    fn finite_difference_matches_exact() {
        let mut rng = Rng::new(3);
        let m = QuadSampler::default().sample(&mut rng).unwrap();
        let p = m.problem();
        let phi = rng.normal_vec(m.dim(), 0.0, 1.0);
        let v = rng.normal_vec(m.dim(), 0.0, 1.0);
        let a = hvp(&p, &m.omega, &phi, &v, HvpScheme::Exact).unwrap();
        let b = hvp(&p, &m.omega, &phi, &v, HvpScheme::FiniteDifference { step: Some(1e-4) }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-6));
        }
    }

    #[test]
    fn synapse_cross_products() {
        let m = QuadModel::new(vec![1.0], vec![1.0], vec![2.0], 1.0, vec![0.0]).unwrap();
        let meta = SynapseMeta::uniform(vec![0.0], 1.0);
        let p = SynapseProblem::new(m.data(), SynapseLayout::BOTH, meta.clone()).unwrap();
        let theta = SynapseLayout::BOTH.pack(&meta);
        assert_eq!(cross_dvp(&p, &theta, &[0.5], &[0.75]).unwrap(), vec![-0.75, 0.375]);
        assert_eq!(cross_dvp(&p, &theta, &[0.5], &[0.0]).unwrap(), vec![0.0, 0.0]);
    }

    /// The same data without closed forms, to exercise the generic paths.
    struct Opaque(crate::theory::QuadData);

    impl DataLoss for Opaque {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn learn(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
            self.0.learn(phi, grad)
        }
        fn eval(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
            self.0.eval(phi, grad)
        }
    }

    struct NoClosedForm(SynapseProblem<Opaque>);

    impl BilevelProblem for NoClosedForm {
        fn fast_dim(&self) -> usize {
            self.0.fast_dim()
        }
        fn meta_dim(&self) -> usize {
            self.0.meta_dim()
        }
        fn learn(&self, t: &[f64], p: &[f64], g: &mut [f64]) -> Result<f64> {
            self.0.learn(t, p, g)
        }
        fn eval(&self, t: &[f64], p: &[f64], g: &mut [f64]) -> Result<f64> {
            self.0.eval(t, p, g)
        }
        fn learn_theta_partials(&self, t: &[f64], p: &[f64]) -> Result<Vec<f64>> {
            self.0.learn_theta_partials(t, p)
        }
        fn initial_fast(&self, t: &[f64]) -> Vec<f64> {
            self.0.initial_fast(t)
        }
    }

    #[test]
    fn generic_cross_product_matches_closed_form() {
        let mut rng = Rng::new(12);
        let m = QuadSampler {
            dim: 7,
            ..Default::default()
        }
        .sample(&mut rng)
        .unwrap();
        let meta = SynapseMeta::new(m.omega.clone(), rng.normal_vec(7, 1.0, 0.2)).unwrap();
        let exact = SynapseProblem::new(m.data(), SynapseLayout::BOTH, meta.clone()).unwrap();
        let opaque = NoClosedForm(SynapseProblem::new(Opaque(m.data()), SynapseLayout::BOTH, meta.clone()).unwrap());
        let theta = SynapseLayout::BOTH.pack(&meta);
        let phi = rng.normal_vec(7, 0.0, 1.0);
        let mu = rng.normal_vec(7, 0.0, 1.0);
        let a = cross_dvp(&exact, &theta, &phi, &mu).unwrap();
        let b = cross_dvp(&opaque, &theta, &phi, &mu).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-7 * x.abs().max(1.0), "{x} vs {y}");
        }
        assert!(hvp(&opaque, &theta, &phi, &mu, HvpScheme::Exact).is_err());
    }

    #[test]
    fn power_iteration_finds_top_curvature() {
        let m = QuadSampler {
            dim: 20,
            lambda: 0.1,
            ..Default::default()
        }
        .sample(&mut Rng::new(1))
        .unwrap();
        let p = m.problem();
        let l = power_iteration(20, 200, |v| hvp(&p, &m.omega, &m.omega, v, HvpScheme::Exact)).unwrap();
        assert!((l - 1.1).abs() < 1e-3, "{l}");
    }
}
