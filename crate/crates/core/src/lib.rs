//! Station-keeping orbit simulation and maximum-causal-entropy inverse
//! optimal control.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod dynamics;
pub mod elements;
pub mod error;
pub mod harness;
pub mod linmodel;
pub mod lqg;
pub mod mce;
pub mod scalar;
mod serde_rows;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use trajectory::Trajectory;

pub type StateVector64 = dynamics::StateVector<f64>;
pub type SpacecraftParams64 = dynamics::SpacecraftParams<f64>;
pub type EnvironmentParams64 = dynamics::EnvironmentParams<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type QuadraticCost64 = lqg::QuadraticCost<f64>;
pub type GaussianPolicy64 = lqg::GaussianPolicy<f64>;
pub type IrlConfig64 = mce::IrlConfig<f64>;
pub type OrbitalElements64 = elements::OrbitalElements<f64>;
pub type DiscreteLinearModel64 = linmodel::DiscreteLinearModel<f64>;
