//! Estimation of the mean vector and covariance matrix of multivariate data
//! whose missingness pattern is (nearly) monotone, by chaining per-column
//! Bayesian shrinkage regressions through the monotone likelihood
//! factorization, plus the portfolio-balancing tools built on top of it.

pub mod data_layout;
pub mod dist;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod geweke;
pub mod io;
pub mod portfolio;
pub mod rng;
pub mod samplers;
pub mod stats;

pub use error::{Error, Result};

pub use nalgebra;
