//! Stochastic differential equations with reproducible Brownian noise and
//! gradients by the stochastic adjoint method.

pub mod adjoint;
pub mod brownian;
pub mod error;
pub mod experiments;
pub mod latent;
pub mod prng;
pub mod solvers;
pub mod stats;
pub mod systems;

pub use error::{Result, SdeError};
