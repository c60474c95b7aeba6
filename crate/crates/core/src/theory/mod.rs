//! Closed-form quadratic oracle, the contrastive error bound and its optimal
//! nudging strength, and empirical error curves.

mod bound;
mod curve;
mod quad;

pub use bound::{beta_star, bound_b, bound_b_derivative, BoundParams};
pub use curve::{error_curve, CurveRow, CurveSpec};
pub use quad::{
    quad_contrastive_exact, quad_error_bounds, quad_meta_gradient, quad_solution, quad_symmetric_exact,
    ContrastiveExact, QuadData, QuadModel, QuadSampler,
};
