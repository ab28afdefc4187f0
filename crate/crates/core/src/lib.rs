//! Two-hop molecular communication with an amplify-and-forward relay:
//! diffusion channel model, relay protocols, semi-analytic error
//! probability and a particle-based Monte Carlo simulator.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod config;
pub mod error;
pub mod num;
pub mod protocols;
pub mod rng;
pub mod simulator;
pub mod special;

pub use error::{Error, Result};
pub use num::Real;

pub type Scalar = f64;
pub type SystemConfig = config::SystemConfig<Scalar>;
pub type LinkGeometry = channel::LinkGeometry<Scalar>;
pub type SamplingScheme = channel::SamplingScheme<Scalar>;
pub type HopProfile = channel::HopProfile<Scalar>;
pub type SourceModel = protocols::SourceModel<Scalar>;
pub type GainModel = protocols::GainModel<Scalar>;
pub type AmplificationSchedule = protocols::AmplificationSchedule<Scalar>;
pub type Analysis = analysis::Analysis<Scalar>;
pub type Simulator = simulator::Simulator<Scalar>;
