//! Ultra-lightweight low-light image enhancement built on shift-based
//! convolution kernels.
//!
//! The crate provides the kernel and multi-scale block primitives, a
//! three-stage encoder/decoder network, the composite training loss, a
//! deterministic trainer, image quality metrics, and parameter/FLOP audits.
//! All numeric code is generic over [`tensor::Scalar`]: `f32` for production
//! runs and `f64` for gradient verification.

pub mod cli;
pub mod dsconv;
pub mod error;
pub mod gauss;
pub mod gradcheck;
pub mod imageio;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod trainer;

pub(crate) mod rng;

pub use error::{Error, Result};
