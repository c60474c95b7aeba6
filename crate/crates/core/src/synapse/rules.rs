use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Consolidation targets `ω` and attraction strengths `λ`, one per weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynapseMeta {
    pub omega: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl SynapseMeta {
    pub fn new(omega: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        check_len("synapse λ", omega.len(), lambda.len())?;
        Ok(Self { omega, lambda })
    }

    /// `ω` with a broadcast scalar `λ`.
    pub fn uniform(omega: Vec<f64>, lambda: f64) -> Self {
        let lambda = vec![lambda; omega.len()];
        Self { omega, lambda }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    fn check(&self, phi: &[f64]) -> Result<()> {
        check_len("synapse ω", phi.len(), self.omega.len())?;
        check_len("synapse λ", phi.len(), self.lambda.len())?;
        if let Some(i) = self.lambda.iter().position(|l| !(*l >= 0.0)) {
            return Err(Error::contract(format!(
                "attraction strength λ[{i}] = {} is negative",
                self.lambda[i]
            )));
        }
        Ok(())
    }
}

/// Adds the consolidation term to a data loss value and gradient in place.
///
/// `value` and `grad` hold `l_learn(φ)` and its gradient on entry; on return
/// they hold `l_learn(φ) + ½Σλ(ω − φ)²` and `∇l_learn + λ⊙(φ − ω)`.
pub fn regularized_learn_loss(value: f64, grad: &mut [f64], phi: &[f64], meta: &SynapseMeta) -> Result<f64> {
    meta.check(phi)?;
    check_len("regularized gradient", phi.len(), grad.len())?;
    let mut reg = 0.0;
    for i in 0..phi.len() {
        let d = phi[i] - meta.omega[i];
        reg += meta.lambda[i] * d * d;
        grad[i] += meta.lambda[i] * d;
    }
    Ok(value + 0.5 * reg)
}

/// Forward meta-plasticity rule from the free and nudged weights.
///
/// Returns `(Δω, Δλ)` with `Δω = (λ/β)(φ_β − φ_0)` and
/// `Δλ = ((φ_0 − ω)² − (φ_β − ω)²) / 2β`.
pub fn synapse_meta_update(
    free: &[f64],
    nudged: &[f64],
    beta: f64,
    meta: &SynapseMeta,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(beta > 0.0) {
        return Err(Error::contract(format!("nudging strength must be positive, got {beta}")));
    }
    meta.check(free)?;
    check_len("nudged weights", free.len(), nudged.len())?;
    Ok(local_rule(free, nudged, beta, meta))
}

/// Centered rule from the weights at `+β` (`plus`) and `−β` (`minus`).
pub fn synapse_symmetric_update(
    plus: &[f64],
    minus: &[f64],
    beta: f64,
    meta: &SynapseMeta,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(beta > 0.0) {
        return Err(Error::contract(format!("nudging strength must be positive, got {beta}")));
    }
    meta.check(plus)?;
    check_len("negative-phase weights", plus.len(), minus.len())?;
    Ok(local_rule(minus, plus, 2.0 * beta, meta))
}

fn local_rule(lo: &[f64], hi: &[f64], span: f64, meta: &SynapseMeta) -> (Vec<f64>, Vec<f64>) {
    let n = lo.len();
    let mut d_omega = Vec::with_capacity(n);
    let mut d_lambda = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b, w) = (lo[i], hi[i], meta.omega[i]);
        d_omega.push(meta.lambda[i] / span * (b - a));
        d_lambda.push(((a - w) * (a - w) - (b - w) * (b - w)) / (2.0 * span));
    }
    (d_omega, d_lambda)
}

/// Clamps every attraction strength to at least `lambda_min`.
pub fn lambda_project(lambda: &mut [f64], lambda_min: f64) {
    for l in lambda {
        *l = l.max(lambda_min);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_lambda_leaves_data_loss() {
        let meta = SynapseMeta::uniform(vec![3.0, -1.0], 0.0);
        let mut g = vec![0.1, 0.2];
        let v = regularized_learn_loss(1.5, &mut g, &[0.0, 0.0], &meta).unwrap();
        assert_eq!(v, 1.5);
        assert_eq!(g, vec![0.1, 0.2]);
    }

    #[test]
    fn hand_value_at_stationary_point() {
        // l(φ) = ½(φ − 1)² at φ = 0.5
        let meta = SynapseMeta::uniform(vec![0.0], 1.0);
        let phi = [0.5];
        let mut g = vec![phi[0] - 1.0];
        let v = regularized_learn_loss(0.5 * 0.25, &mut g, &phi, &meta).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let meta = SynapseMeta::new(vec![0.3, -0.7, 1.1], vec![0.5, 2.0, 0.1]).unwrap();
        let data = |p: &[f64]| p.iter().map(|x| x.sin() + 0.25 * x.powi(4)).sum::<f64>();
        let data_grad = |p: &[f64]| p.iter().map(|x| x.cos() + x.powi(3)).collect::<Vec<_>>();
        let total = |p: &[f64]| {
            let mut g = data_grad(p);
            regularized_learn_loss(data(p), &mut g, p, &meta).unwrap()
        };
        let phi = [0.2, 0.9, -0.4];
        let mut g = data_grad(&phi);
        regularized_learn_loss(data(&phi), &mut g, &phi, &meta).unwrap();
        for i in 0..3 {
            let h = 1e-5;
            let mut up = phi;
            let mut dn = phi;
            up[i] += h;
            dn[i] -= h;
            let fd = (total(&up) - total(&dn)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let meta = SynapseMeta::new(vec![0.0], vec![-0.1]).unwrap();
        let mut g = vec![0.0];
        assert!(matches!(
            regularized_learn_loss(0.0, &mut g, &[0.0], &meta),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn oracle_rule_values() {
        let meta = SynapseMeta::uniform(vec![0.0], 1.0);
        let (dw, dl) = synapse_meta_update(&[0.5], &[1.0], 1.0, &meta).unwrap();
        assert_eq!(dw, vec![0.5]);
        assert_eq!(dl, vec![-0.375]);
    }

    #[test]
    fn equal_solutions_give_no_change() {
        let meta = SynapseMeta::uniform(vec![0.2, 0.4], 0.7);
        let (dw, dl) = synapse_meta_update(&[1.0, -2.0], &[1.0, -2.0], 0.1, &meta).unwrap();
        assert_eq!(dw, vec![0.0, 0.0]);
        assert_eq!(dl, vec![0.0, 0.0]);
    }

    #[test]
    fn nonpositive_beta_rejected() {
        let meta = SynapseMeta::uniform(vec![0.0], 1.0);
        assert!(synapse_meta_update(&[0.0], &[0.0], 0.0, &meta).is_err());
        assert!(synapse_symmetric_update(&[0.0], &[0.0], -1.0, &meta).is_err());
    }

    #[test]
    fn projection_clamps() {
        let mut l = vec![-0.2, 0.3];
        lambda_project(&mut l, 0.0);
        assert_eq!(l, vec![0.0, 0.3]);
        let mut l = vec![0.5, 2.0];
        lambda_project(&mut l, 1e-6);
        assert_eq!(l, vec![0.5, 2.0]);
    }

    proptest! {
        #[test]
        fn lambda_grows_when_nudge_pulls_toward_omega(
            free in -3.0..3.0f64, nudged in -3.0..3.0f64, omega in -3.0..3.0f64,
            lambda in 0.0..5.0f64, beta in 1e-3..2.0f64,
        ) {
            let meta = SynapseMeta::uniform(vec![omega], lambda);
            let (_, dl) = synapse_meta_update(&[free], &[nudged], beta, &meta).unwrap();
            let closer = (nudged - omega).abs() < (free - omega).abs();
            let farther = (nudged - omega).abs() > (free - omega).abs();
            if closer { prop_assert!(dl[0] > 0.0); }
            if farther { prop_assert!(dl[0] < 0.0); }
        }

        #[test]
        fn rules_are_local(
            base in prop::collection::vec(-2.0..2.0f64, 4 * 4),
            noise in prop::collection::vec(-2.0..2.0f64, 4 * 3),
            beta in 1e-3..1.0f64,
        ) {
            let (free, rest) = base.split_at(4);
            let (nudged, rest) = rest.split_at(4);
            let (omega, lambda) = rest.split_at(4);
            let lambda: Vec<f64> = lambda.iter().map(|l| l.abs()).collect();
            let meta = SynapseMeta::new(omega.to_vec(), lambda.clone()).unwrap();
            let (dw, dl) = synapse_meta_update(free, nudged, beta, &meta).unwrap();
            // perturb every coordinate except the first
            let mut f2 = free.to_vec();
            let mut n2 = nudged.to_vec();
            let mut o2 = omega.to_vec();
            for i in 1..4 {
                f2[i] += noise[i - 1];
                n2[i] += noise[3 + i - 1];
                o2[i] += noise[6 + i - 1];
            }
            let meta2 = SynapseMeta::new(o2, lambda).unwrap();
            let (dw2, dl2) = synapse_meta_update(&f2, &n2, beta, &meta2).unwrap();
            prop_assert_eq!(dw[0], dw2[0]);
            prop_assert_eq!(dl[0], dl2[0]);
        }
    }
}
