//! Distributed polarization sensing from noisy Jones matrices.
//!
//! The crate simulates a fiber as a cascade of PDL / rotation / DGD sections,
//! generates time-varying noisy frequency-domain Jones matrices, and recovers
//! the per-section parameters with two estimators:
//!
//! * [`isa`]: layer peeling on the time-domain taps (exact without noise).
//! * [`learner`]: Adam on the frequency-averaged Frobenius loss with analytic
//!   gradients of the cascade.
//!
//! [`harness`] wires both into reproducible tracking experiments.

pub mod error;
pub mod harness;
pub mod isa;
pub mod jones;
pub mod learner;
pub mod polmodel;
pub mod simulator;

pub use error::{Error, Result};
pub use jones::{JonesMatrix, C64};
pub use polmodel::{
    channel_response, impulse_taps, make_dgd, make_pdl, make_rotation, response_distance,
    ChannelParams, FrequencyGrid, FrequencyResponse, SectionParams, TapSequence,
};
