use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numkit::{norm, Rng};
use crate::synapse::{DataLoss, SynapseLayout, SynapseMeta, SynapseProblem};

/// Quadratic stand-in for a complex-synapse task.
///
/// `L_learn = ½(φ − φˡ)ᵀH(φ − φˡ) + ½λ‖φ − ω‖²` and
/// `L_eval = ½(φ − φᵉ)ᵀH(φ − φᵉ)`, with `H` diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadModel {
    pub h: Vec<f64>,
    pub phi_learn: Vec<f64>,
    pub phi_eval: Vec<f64>,
    pub lambda: f64,
    pub omega: Vec<f64>,
}

impl QuadModel {
    pub fn new(h: Vec<f64>, phi_learn: Vec<f64>, phi_eval: Vec<f64>, lambda: f64, omega: Vec<f64>) -> Result<Self> {
        let n = h.len();
        check_len("quadratic φˡ", n, phi_learn.len())?;
        check_len("quadratic φᵉ", n, phi_eval.len())?;
        check_len("quadratic ω", n, omega.len())?;
        if let Some(i) = h.iter().position(|x| !(*x > 0.0)) {
            return Err(Error::Domain(format!("curvature H[{i}] = {} is not positive", h[i])));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Domain(format!("λ = {lambda} is negative")));
        }
        Ok(Self {
            h,
            phi_learn,
            phi_eval,
            lambda,
            omega,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    /// Smallest and largest curvature.
    pub fn curvature_range(&self) -> (f64, f64) {
        let lo = self.h.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.h.iter().copied().fold(0.0, f64::max);
        (lo, hi)
    }

    pub fn data(&self) -> QuadData {
        QuadData {
            h: self.h.clone(),
            phi_learn: self.phi_learn.clone(),
            phi_eval: self.phi_eval.clone(),
        }
    }

    /// The model as a synapse problem with `θ = ω`.
    pub fn problem(&self) -> SynapseProblem<QuadData> {
        let base = SynapseMeta::uniform(self.omega.clone(), self.lambda);
        SynapseProblem::new(self.data(), SynapseLayout::OMEGA, base).expect("lengths checked at construction")
    }
}

/// The data part of [`QuadModel`], without the synaptic regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadData {
    pub h: Vec<f64>,
    pub phi_learn: Vec<f64>,
    pub phi_eval: Vec<f64>,
}

fn half_quad(h: &[f64], center: &[f64], phi: &[f64], grad: &mut [f64]) -> Result<f64> {
    check_len("quadratic φ", h.len(), phi.len())?;
    let mut v = 0.0;
    for i in 0..h.len() {
        let d = phi[i] - center[i];
        v += h[i] * d * d;
        grad[i] += h[i] * d;
    }
    Ok(0.5 * v)
}

impl DataLoss for QuadData {
    fn dim(&self) -> usize {
        self.h.len()
    }

    fn learn(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        half_quad(&self.h, &self.phi_learn, phi, grad)
    }

    fn eval(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        half_quad(&self.h, &self.phi_eval, phi, grad)
    }

    fn learn_hvp(&self, _phi: &[f64], v: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(check_len("hvp v", self.h.len(), v.len()).map(|_| self.h.iter().zip(v).map(|(h, v)| h * v).collect()))
    }
}

/// Minimizer of `L_learn + β·L_eval`.
pub fn quad_solution(m: &QuadModel, beta: f64) -> Result<Vec<f64>> {
    if !(beta > -1.0) {
        return Err(Error::Domain(format!("closed form needs β > −1, got {beta}")));
    }
    Ok((0..m.dim())
        .map(|i| {
            let r = m.lambda / m.h[i];
            (m.phi_learn[i] + beta * m.phi_eval[i] + r * m.omega[i]) / (1.0 + beta + r)
        })
        .collect())
}

/// Exact meta-gradient `∇ω` of `L_eval` at the free solution.
pub fn quad_meta_gradient(m: &QuadModel) -> Vec<f64> {
    (0..m.dim())
        .map(|i| {
            let r = m.lambda / m.h[i];
            let psi = (m.phi_eval[i] - m.phi_learn[i]) + r * (m.phi_eval[i] - m.omega[i]);
            -m.lambda * psi / ((1.0 + r) * (1.0 + r))
        })
        .collect()
}

/// A contrastive estimate at exact solutions and its bias `∇ − ∇̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveExact {
    pub estimate: Vec<f64>,
    pub error: Vec<f64>,
}

/// Forward contrastive estimate `∇̂ = −(λ/β)(φ*_β − φ*_0)` and its error
/// `β((1+β)I + λH⁻¹)⁻¹∇`, both in closed form.
pub fn quad_contrastive_exact(m: &QuadModel, beta: f64) -> Result<ContrastiveExact> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("contrastive estimate needs β > 0, got {beta}")));
    }
    let p0 = quad_solution(m, 0.0)?;
    let pb = quad_solution(m, beta)?;
    let grad = quad_meta_gradient(m);
    let estimate = (0..m.dim()).map(|i| -m.lambda / beta * (pb[i] - p0[i])).collect();
    let error = (0..m.dim())
        .map(|i| beta / (1.0 + beta + m.lambda / m.h[i]) * grad[i])
        .collect();
    Ok(ContrastiveExact { estimate, error })
}

/// Centered estimate `−(λ/2β)(φ*_β − φ*_{−β})` and its error; needs `0 < β < 1`.
pub fn quad_symmetric_exact(m: &QuadModel, beta: f64) -> Result<ContrastiveExact> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("centered closed form needs 0 < β < 1, got {beta}")));
    }
    let pp = quad_solution(m, beta)?;
    let pm = quad_solution(m, -beta)?;
    let grad = quad_meta_gradient(m);
    let estimate: Vec<f64> = (0..m.dim()).map(|i| -m.lambda / (2.0 * beta) * (pp[i] - pm[i])).collect();
    let error = grad.iter().zip(&estimate).map(|(g, e)| g - e).collect();
    Ok(ContrastiveExact { estimate, error })
}

/// Lower and upper bounds on `‖∇ − ∇̂‖` at exact solutions:
/// `μβ/((1+β)μ+λ)·‖∇‖` and `Lβ/((1+β)L+λ)·‖∇‖` with `μ`, `L` the curvature range.
pub fn quad_error_bounds(m: &QuadModel, beta: f64) -> (f64, f64) {
    let (mu, l) = m.curvature_range();
    let g = norm(&quad_meta_gradient(m));
    let f = |c: f64| c * beta / ((1.0 + beta) * c + m.lambda) * g;
    (f(mu), f(l))
}

/// Random quadratic instances.
///
/// `H = diag(1, 1/2, …, 1/N)`, `ω ~ N(0, σ_ω²)`, and both minimizers scatter
/// with `σ_noise` around a task center `φ^τ ~ N(0, σ_τ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadSampler {
    pub dim: usize,
    pub lambda: f64,
    pub sigma_omega: f64,
    pub sigma_task: f64,
    pub sigma_noise: f64,
}

impl Default for QuadSampler {
    fn default() -> Self {
        Self {
            dim: 50,
            lambda: 0.1,
            sigma_omega: 2.0,
            sigma_task: 1.0,
            sigma_noise: 0.5,
        }
    }
}

impl QuadSampler {
    pub fn sample(&self, rng: &mut Rng) -> Result<QuadModel> {
        let n = self.dim;
        if n == 0 {
            return Err(Error::Domain("quadratic instance needs dimension ≥ 1".into()));
        }
        let h = (1..=n).map(|i| 1.0 / i as f64).collect();
        let omega = rng.normal_vec(n, 0.0, self.sigma_omega);
        let center = rng.normal_vec(n, 0.0, self.sigma_task);
        let phi_learn = center.iter().map(|c| c + rng.normal(0.0, self.sigma_noise)).collect();
        let phi_eval = center.iter().map(|c| c + rng.normal(0.0, self.sigma_noise)).collect();
        QuadModel::new(h, phi_learn, phi_eval, self.lambda, omega)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilevel::{AugmentedObjective, BilevelProblem};

    fn unit() -> QuadModel {
        QuadModel::new(vec![1.0], vec![1.0], vec![2.0], 1.0, vec![0.0]).unwrap()
    }

    #[test]
    fn one_dimensional_hand_values() {
        let m = unit();
        assert_eq!(quad_solution(&m, 0.0).unwrap(), vec![0.5]);
        assert_eq!(quad_solution(&m, 1.0).unwrap(), vec![1.0]);
        assert_eq!(quad_meta_gradient(&m), vec![-0.75]);
        let c = quad_contrastive_exact(&m, 1.0).unwrap();
        assert_eq!(c.estimate, vec![-0.5]);
        assert_eq!(c.error, vec![-0.25]);
    }

    #[test]
    fn unregularized_free_solution_is_learn_minimizer() {
        let m = QuadModel::new(vec![0.3, 2.0], vec![1.5, -0.5], vec![0.0, 0.0], 0.0, vec![9.0, 9.0]).unwrap();
        assert_eq!(quad_solution(&m, 0.0).unwrap(), m.phi_learn);
        assert_eq!(quad_meta_gradient(&m), vec![0.0, 0.0]);
    }

    #[test]
    fn large_beta_approaches_eval_minimizer() {
        let m = QuadSampler {
            dim: 10,
            ..Default::default()
        }
        .sample(&mut Rng::new(3))
        .unwrap();
        for beta in [10.0, 100.0, 1000.0] {
            let p = quad_solution(&m, beta).unwrap();
            for i in 0..m.dim() {
                let bound = (m.phi_learn[i] - m.phi_eval[i]).abs().max((m.omega[i] - m.phi_eval[i]).abs()) * (1.0 + m.lambda / m.h[i]) / (1.0 + beta);
                assert!((p[i] - m.phi_eval[i]).abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn solutions_are_stationary() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let m = QuadSampler::default().sample(&mut rng).unwrap();
            let p = m.problem();
            let theta = m.omega.clone();
            for beta in [0.0, 0.3, -0.5, 4.0] {
                let phi = quad_solution(&m, beta).unwrap();
                let (_, g) = AugmentedObjective::new(&p, &theta, beta).eval(&phi).unwrap();
                assert!(norm(&g) < 1e-12, "{}", norm(&g));
            }
        }
    }

    #[test]
    fn meta_gradient_matches_finite_differences() {
        let m = QuadSampler {
            dim: 8,
            lambda: 0.7,
            ..Default::default()
        }
        .sample(&mut Rng::new(11))
        .unwrap();
        let g = quad_meta_gradient(&m);
        let eval_at = |omega: &[f64]| {
            let mut mm = m.clone();
            mm.omega = omega.to_vec();
            let phi = quad_solution(&mm, 0.0).unwrap();
            let mut buf = vec![0.0; phi.len()];
            mm.data().eval(&phi, &mut buf).unwrap()
        };
        for i in 0..m.dim() {
            let h = 1e-5;
            let mut up = m.omega.clone();
            let mut dn = m.omega.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (eval_at(&up) - eval_at(&dn)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn exact_hvp_adds_regularizer() {
        let m = QuadModel::new(vec![1.0], vec![1.0], vec![0.0], 1.0, vec![0.0]).unwrap();
        let p = m.problem();
        assert_eq!(p.hvp_exact(&[0.0], &[0.3], &[1.0]).unwrap().unwrap(), vec![2.0]);
    }

    #[test]
    fn error_respects_two_sided_bound() {
        let mut rng = Rng::new(17);
        for _ in 0..50 {
            let m = QuadSampler::default().sample(&mut rng).unwrap();
            for beta in [1e-3, 1e-2, 0.1, 1.0] {
                let err = norm(&quad_contrastive_exact(&m, beta).unwrap().error);
                let (lo, hi) = quad_error_bounds(&m, beta);
                assert!(lo * (1.0 - 1e-12) <= err && err <= hi * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(QuadModel::new(vec![0.0], vec![0.0], vec![0.0], 1.0, vec![0.0]).is_err());
        assert!(QuadModel::new(vec![1.0], vec![0.0], vec![0.0], -1.0, vec![0.0]).is_err());
        assert!(quad_solution(&unit(), -1.0).is_err());
        assert!(quad_contrastive_exact(&unit(), 0.0).is_err());
    }
}
