use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the contrastive error bound.
///
/// `b_learn` and `b_eval` bound the Lipschitz constants of the `θ`-partials
/// of the two losses; `c` is the problem-dependent bias constant. `mu`, `l`,
/// `rho` and `sigma` (strong convexity, smoothness, Hessian and
/// cross-derivative Lipschitz constants) are carried for reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundParams {
    pub b_learn: f64,
    pub b_eval: f64,
    pub c: f64,
    pub mu: f64,
    pub l: f64,
    pub rho: f64,
    pub sigma: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            b_learn: 1.0,
            b_eval: 1.0,
            c: 1.0,
            mu: 1.0,
            l: 1.0,
            rho: 1.0,
            sigma: 1.0,
        }
    }
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.b_learn, self.b_eval, self.c, self.mu, self.l, self.rho, self.sigma];
        if all.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Domain("bound constants must be finite and nonnegative".into()));
        }
        if self.mu > self.l {
            return Err(Error::Domain(format!("μ = {} exceeds L = {}", self.mu, self.l)));
        }
        Ok(())
    }
}

fn check_inputs(delta: f64, delta_nudged: f64) -> Result<()> {
    if !(delta >= 0.0 && delta_nudged >= 0.0) {
        return Err(Error::Domain(format!(
            "solution errors must be nonnegative, got δ = {delta}, δ′ = {delta_nudged}"
        )));
    }
    Ok(())
}

/// `B_learn(δ + δ′)/β + B_eval·δ′ + Cβ/(1 + β)`.
pub fn bound_b(p: &BoundParams, delta: f64, delta_nudged: f64, beta: f64) -> Result<f64> {
    check_inputs(delta, delta_nudged)?;
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("bound needs β > 0, got {beta}")));
    }
    Ok(p.b_learn * (delta + delta_nudged) / beta + p.b_eval * delta_nudged + p.c * beta / (1.0 + beta))
}

/// `d bound_b / dβ`.
pub fn bound_b_derivative(p: &BoundParams, delta: f64, delta_nudged: f64, beta: f64) -> Result<f64> {
    check_inputs(delta, delta_nudged)?;
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("bound needs β > 0, got {beta}")));
    }
    Ok(-p.b_learn * (delta + delta_nudged) / (beta * beta) + p.c / ((1.0 + beta) * (1.0 + beta)))
}

/// Minimizer of [`bound_b`] over `β > 0` and the bound it attains.
///
/// With `a = B_learn(δ + δ′)` the optimum is `β* = √a / (√C − √a)`; it exists
/// only when `a < C`. Exact solutions (`a = 0`) give the limit `β* = 0`.
pub fn beta_star(p: &BoundParams, delta: f64, delta_nudged: f64) -> Result<(f64, f64)> {
    check_inputs(delta, delta_nudged)?;
    let a = p.b_learn * (delta + delta_nudged);
    if a == 0.0 {
        return Ok((0.0, p.b_eval * delta_nudged));
    }
    if !(a < p.c) {
        return Err(Error::Domain(format!(
            "no interior optimum: B_learn(δ + δ′) = {a} is not below C = {}",
            p.c
        )));
    }
    let beta = a.sqrt() / (p.c.sqrt() - a.sqrt());
    Ok((beta, bound_b(p, delta, delta_nudged, beta)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    #[test]
    fn hand_values() {
        let p = BoundParams::default();
        assert_eq!(bound_b(&p, 0.0, 0.0, 1.0).unwrap(), 0.5);
        let v = bound_b(&p, 0.01, 0.01, 0.1).unwrap();
        assert!((v - (0.2 + 0.01 + 0.1 / 1.1)).abs() < 1e-15);
        let (b, _) = beta_star(&p, 0.125, 0.125).unwrap();
        assert!((b - 1.0).abs() < 1e-15);
        assert_eq!(beta_star(&p, 0.0, 0.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn no_interior_optimum_is_domain_error() {
        let p = BoundParams::default();
        assert!(matches!(beta_star(&p, 0.6, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn optimum_beats_random_betas() {
        let mut rng = Rng::new(8);
        let p = BoundParams {
            b_eval: 0.5,
            c: 2.0,
            ..Default::default()
        };
        let (d, dn) = (0.03, 0.01);
        let (bs, best) = beta_star(&p, d, dn).unwrap();
        assert!(best <= p.b_eval * dn + 2.0 * (p.c * p.b_learn * (d + dn)).sqrt() + 1e-12);
        for _ in 0..100 {
            let beta = 10f64.powf(rng.uniform(-4.0, 2.0));
            assert!(best <= bound_b(&p, d, dn, beta).unwrap() + 1e-15);
        }
        assert!(bound_b_derivative(&p, d, dn, bs * 0.99).unwrap() < 0.0);
        assert!(bound_b_derivative(&p, d, dn, bs * 1.01).unwrap() > 0.0);
    }

    #[test]
    fn invalid_constants_rejected() {
        let p = BoundParams {
            mu: 2.0,
            l: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(BoundParams::default().validate().is_ok());
    }
}
