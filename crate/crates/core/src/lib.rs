//! Safety-critical nonlinear MPC with density-function (CDF) and barrier
//! (CBF) constraints.

pub mod barrier;
pub mod density;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod pf;
pub mod scalar;
pub mod solver;
pub mod runtime;
pub mod scenario;
pub mod transcription;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Obstacle = geometry::Obstacle<f64>;
pub type DensityField = density::DensityField<f64>;
pub type BarrierSpec = barrier::BarrierSpec<f64>;
pub type Auv = dynamics::Auv<f64>;
pub type LinearField = dynamics::LinearField<f64>;
