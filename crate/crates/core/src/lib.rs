//! Simulation, learning and certification core for a three-carrier
//! integrated energy system scheduled by a soft actor-critic agent.

// `!(x >= 0.0)` is how parameter checks reject NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod bounds;
pub mod devices;
pub mod env;
pub mod error;
pub mod nn;
pub mod pricing;
pub mod profile;
pub mod sac;
pub mod scalar;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// Double-precision forms of the generic building blocks.
pub type Mlp = nn::Mlp<f64>;
pub type MlpParams = nn::MlpParams<f64>;
pub type GaussianPolicy = nn::GaussianPolicy<f64>;
pub type BoxBound = bounds::BoxBound<f64>;
pub type LinearBound = bounds::LinearBound<f64>;
