//! Scale-coherent Bayesian stochastic volatility for high-frequency prices.
//!
//! The model couples a log-price random walk whose volatility follows an
//! Ornstein-Uhlenbeck log-volatility process with an additive
//! microstructure-noise layer on the observed log prices. Parameters live
//! in two coordinate systems: continuous-time rates (per millisecond) and
//! their exact discretizations at a sampling period `Δ`.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs plus an explicit RNG, so replicate studies can
//! be parallelized by the caller without shared state.
//!
//! Modules:
//! - [`model`]: parameter types and the `Δ` transforms.
//! - [`simulate`]: exact-discretization paths, noise layers, subsampling.
//! - [`priors`]: moment-matched prior elicitation at a given `Δ`.
//! - [`ssm`]: scalar linear-Gaussian FFBS engine and the log-χ² mixture.
//! - [`mcmc`]: the Gibbs sampler and chain output.
//! - [`estimators`]: posterior integrated variance, realized variance,
//!   kernel realized variance and stationary-bootstrap intervals.
//! - [`experiments`]: closed-form `α̂` posterior variance and the building
//!   blocks of the coverage and `α̂`-variance studies.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dist;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod mcmc;
pub mod model;
pub mod priors;
pub mod rng;
pub mod simulate;
pub mod ssm;

pub use error::{Error, Result};
pub use model::{continuize, discretize, stationary_logvol, ContinuousParams, DiscreteParams, InitialConditions};
