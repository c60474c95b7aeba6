//! Contrastive meta-learning.
//!
//! A bilevel learning problem has fast parameters `φ`, adapted per task by
//! minimizing a learning loss, and slow meta-parameters `θ` that shape that
//! learning process. This crate estimates the meta-gradient of the
//! post-learning evaluation loss with respect to `θ` by contrasting two
//! solutions of the same learning problem: a *free* solution at `β = 0`
//! and a *nudged* solution of the augmented loss `L_learn + β·L_eval`.
//!
//! Modules, bottom-up:
//!
//! - [`numkit`]: dense vectors and matrices, seeded RNG streams, a small MLP
//!   with explicit backward passes, losses and first-order optimizers.
//! - [`bilevel`]: the generic engine (augmented objective, phase solving,
//!   forward and symmetric contrastive updates, outer meta-step).
//! - [`synapse`]: the complex-synapse consolidation model `(ω, λ)` and the
//!   top-down modulation model.
//! - [`implicit`]: implicit-differentiation baselines (T1-T2, Neumann, CG).
//! - [`theory`]: the closed-form quadratic oracle, error bounds and the
//!   optimal nudging strength.
//! - [`tasks`]: sinusoid regression, ridge hyperparameter learning and the
//!   wheel bandit.
//! - [`spiking`]: a leaky integrate-and-fire network trained with e-prop.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bilevel;
pub mod error;
pub mod implicit;
pub mod numkit;
pub mod spiking;
pub mod synapse;
pub mod tasks;
pub mod theory;

pub use error::{Error, Result};

/// Library version, echoed into run records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
