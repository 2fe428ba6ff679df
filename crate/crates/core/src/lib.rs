//! Infinite-width neural tangent kernels of deep networks.

pub mod activations;
pub mod asymptotics;
pub mod dataset;
pub mod empirical;
pub mod error;
pub mod gaussmath;
pub mod kernels;
pub mod phase;
pub mod regression;
pub mod selftest;
pub mod spectral;

pub use error::{NtkError, Result};
