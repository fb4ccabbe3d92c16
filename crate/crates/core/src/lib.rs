//! Simulation, sub-sampling, interpolation and scoring of focused-beam
//! ultrasound RF data in the Rx-Xmit domain.
//!
//! The crate covers the whole chain: [`simcore`] produces Depth-Rx-Xmit
//! cubes from point-scatterer phantoms, [`sampling`] drops receive channels
//! and transmit events, the interpolators ([`interp_linear`], [`aloha`],
//! [`framenet`]) restore the missing samples plane by plane, [`beamform`]
//! turns cubes into B-mode images and [`metrics`] scores them.
//! [`pipeline`] strings the stages together for the command line tool.

pub mod aloha;
pub mod beamform;
pub mod error;
pub mod framenet;
pub mod hankel;
pub mod interp_linear;
pub mod metrics;
pub mod pipeline;
mod plane;
pub mod sampling;
pub mod simcore;

pub use error::{Error, Result};
pub use plane::RxXmitPlane;
