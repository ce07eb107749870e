//! Rerandomized experiments and design-based inference for quantile
//! treatment effects.
//!
//! The crate is organized around the life cycle of an experiment:
//!
//! - [`popmodel`]: finite populations with both potential outcomes and the
//!   oracle quantities (covariance blocks, squared correlations, true
//!   asymptotic variance components) that only a simulator can see.
//! - [`design`]: complete randomization and Mahalanobis rerandomization.
//! - [`limitlaw`]: chi-square numerics, the truncated Gaussian component and
//!   quantiles of the Gaussian / truncated-Gaussian mixture.
//! - [`estimate`]: observed-data QTE estimates, conservative variance bounds
//!   and confidence intervals.
//! - [`simharness`]: seeded, parallel Monte Carlo scenarios.
//! - [`io`]: delimited-text readers and writers for every file format.

pub mod design;
pub mod error;
pub mod estimate;
pub mod io;
pub mod limitlaw;
mod linalg;
mod order;
pub mod popmodel;
pub mod rng;
pub mod simharness;

pub use error::{Error, ErrorClass, Result};
