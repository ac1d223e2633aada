//! Model-ensemble exploration and exploitation for continuous control:
//! a from-scratch Dyna-style learner built on a probabilistic dynamics
//! ensemble and soft actor-critic.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod buffer;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod explore;
pub mod model;
pub mod nn;
pub mod random;
pub mod rollout;
pub mod runner;
pub mod sac;
pub mod scalar;

pub use error::{MeeeError, Result};
pub use scalar::Scalar;

pub type DenseNet64 = nn::DenseNet<f64>;
pub type DenseNet32 = nn::DenseNet<f32>;
pub type Ensemble64 = model::Ensemble<f64>;
pub type Ensemble32 = model::Ensemble<f32>;
pub type GaussianPolicy64 = sac::GaussianPolicy<f64>;
pub type GaussianPolicy32 = sac::GaussianPolicy<f32>;
pub type SacAgent64 = sac::SacAgent<f64>;
pub type SacAgent32 = sac::SacAgent<f32>;
pub type LqrEnv64 = env::LqrEnv<f64>;
pub type PendulumEnv64 = env::PendulumEnv<f64>;
