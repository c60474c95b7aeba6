//! Implicit-differentiation meta-gradients.
//!
//! At a learn-loss minimizer `φ̂` the meta-gradient is
//! `∂θL_eval + μ·∂φ∂θL_learn` with `μ = −∂φL_eval·(∂²φL_learn)⁻¹`. The
//! solvers here approximate `μ` matrix-free: by the identity (T1-T2), a
//! truncated Neumann series, or conjugate gradients.

mod products;
mod solve;

pub use products::{cross_dvp, hvp, power_iteration, HvpScheme};
pub use solve::{implicit_meta_gradient, solve_mu, ImplicitEstimate, ImplicitEstimator, MuSolve, MuSolver, MuSolverCfg};
