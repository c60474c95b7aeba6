//! Contrastive meta-learning engine.
//!
//! For a task with learning loss `L_learn(φ, θ)` and evaluation loss
//! `L_eval(φ, θ)`, the augmented loss is `𝓛(φ, θ, β) = L_learn + β·L_eval`.
//! Minimizing it at `β = 0` (free phase) and at `β ≠ 0` (nudged phase)
//! yields two fast-parameter solutions whose contrast,
//!
//! ```text
//! Δθ = −(1/β)·(∂θ𝓛(φ̂_β, θ, β) − ∂θ𝓛(φ̂_0, θ, 0)),
//! ```
//!
//! approximates the negative meta-gradient `−∇θ L_eval(φ*_θ, θ)`.

mod estimator;
mod meta;
mod objective;
mod phase;

pub use estimator::{
    contrastive_delta, contrastive_update, symmetric_update, ContrastiveConfig,
    ContrastiveEstimator, MetaGradientEstimator, TaskEstimate, Variant,
};
pub use meta::{meta_step, BatchDiagnostics, FreeInit, MetaState, TaskDiagnostics};
pub use objective::{AugmentedObjective, BilevelProblem};
pub use phase::{polish_newton, solve_phase, PhaseBudget, PhaseResult};

#[cfg(test)]
mod tests;
