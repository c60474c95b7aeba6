//! Meta-learning models: the complex synapse and top-down modulation.
//!
//! A complex synapse keeps, next to its weight `φᵢ`, a consolidated value
//! `ωᵢ` and an attraction strength `λᵢ`. Learning minimizes the data loss
//! plus `½Σλᵢ(ωᵢ − φᵢ)²`; meta-learning moves `ω` and `λ` with purely local
//! rules that compare the free and nudged weights.

mod modulation;
mod problem;
mod rules;

pub use modulation::{modulation_theta_partials, ModulationProblem, RegressionData};
pub use problem::{DataLoss, LambdaMode, SynapseLayout, SynapseProblem};
pub use rules::{
    lambda_project, regularized_learn_loss, synapse_meta_update, synapse_symmetric_update,
    SynapseMeta,
};
