//! Noise-resilience analysis for capsule networks: a small trainable
//! CapsNet with instrumented operation sites, Gaussian noise injection,
//! approximate multiplier profiling, resilience sweeps, component selection
//! and energy estimation.

pub mod approx;
pub mod capsnet;
pub mod data;
pub mod energy;
mod error;
pub mod noise;
pub mod resilience;
pub mod site;
pub mod tensor;

pub use error::{Error, Result};
