//! Gaussian-process hyperparameter estimation by minibatch stochastic gradient
//! descent on the marginal likelihood.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod prediction;
pub mod sampling;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
