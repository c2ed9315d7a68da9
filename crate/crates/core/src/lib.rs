//! Generalized Beta AR(1) models for proportion-valued time series.
//!
//! The crate covers the full pipeline:
//!
//! * [`specfun`]: log-gamma, digamma, trigamma, the third polygamma and log-beta.
//! * [`stochastic`]: seedable random streams, Beta / Gaussian draws and the
//!   truncated AR(1) covariate generator.
//! * [`model`]: x-link transforms, conditional mean and forward simulation.
//! * [`inference`]: partial log-likelihood, analytic score and Hessian,
//!   the partial maximum-likelihood fit and Q-Q export.
//! * [`detector`]: weighted score CUSUM monitoring with Monte-Carlo
//!   threshold calibration.
//! * [`evalkit`]: one-step forecasts, prediction intervals and metrics.
//! * [`experiment`]: replication studies built from the pieces above.

pub mod detector;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod inference;
mod linalg;
mod optim;
pub mod model;
pub mod specfun;
pub mod stochastic;

pub use error::{Error, Result};
