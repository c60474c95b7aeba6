//! Dense numerics substrate shared by every model in the crate.

mod linalg;
mod loss;
mod mlp;
mod optim;
mod rng;
pub mod stats;

pub use linalg::{all_finite, axpy, dot, max_abs, norm, scale, sub, Mat};
pub use loss::{loss_eval, masked_mse, LossKind, Targets};
pub use mlp::{
    kaiming_normal, mlp_backward, mlp_forward, Activation, ForwardCache, MlpArch, MlpGrads,
    MlpParams, ModulationParams,
};
pub use optim::{OptimKind, OptimSpec, OptimState};
pub use rng::Rng;

/// A flat real vector. Fast and slow parameters are stored this way.
pub type RealVec = Vec<f64>;
