//! Recurrent leaky integrate-and-fire network with Poisson population input
//! coding and e-prop plasticity.
//!
//! Spiking activity does not depend on the readout weights, so e-prop's
//! output-weight update is the exact gradient of the time-averaged loss.
//! Input and recurrent updates use eligibility traces with a configurable
//! pseudo-derivative.

mod encoder;
mod eprop;
mod lif;

pub use encoder::{encode_poisson, standardize_input, PoissonEncoder, Raster};
pub use eprop::{
    eligibility_traces, eprop_gradients, eprop_update, low_pass, EligibilityTraces, EpropCfg, EpropGrads, LabeledRaster,
    SpikingData,
};
pub use lif::{lif_pseudo_derivative, lif_rollout, LifParams, LifShape, LifState, PseudoDerivative, Rollout};
