//! Quantization, range-scaled Gaussian noise injection, and the behavioral
//! fixed-point convolution used to check the noise model against simulated
//! approximate multipliers.

mod fixed_point;
mod inject;
mod quant;

pub use fixed_point::fixed_point_conv;
pub use inject::{inject, BoundInjector, InjectionSession, Injector, NoiseSpec, NoiseTarget};
pub use quant::{dequantize, quantize, QuantParams, QuantizedTensor};
