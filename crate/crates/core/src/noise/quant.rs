use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear `b`-bit quantization of the interval `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bits: u32,
    pub min: f64,
    pub max: f64,
}

impl QuantParams {
    pub fn new(bits: u32, min: f64, max: f64) -> Result<Self> {
        if !(2..=16).contains(&bits) {
            return Err(Error::InvalidArgument(format!(
                "bit width {bits} outside 2..=16"
            )));
        }
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::InvalidArgument("quantization bounds must be finite".into()));
        }
        if max <= min {
            return Err(Error::DegenerateRange(min));
        }
        Ok(Self { bits, min, max })
    }

    pub fn eight_bit(min: f64, max: f64) -> Result<Self> {
        Self::new(8, min, max)
    }

    /// Largest code, `2^b - 1`.
    pub fn levels(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Real-valued width of one code step.
    pub fn step(&self) -> f64 {
        (self.max - self.min) / f64::from(self.levels())
    }

    pub fn quantize_value(&self, x: f64) -> u32 {
        let clamped = x.clamp(self.min, self.max);
        let scaled = (clamped - self.min) / (self.max - self.min) * f64::from(self.levels());
        // f64::round rounds half away from zero
        scaled.round() as u32
    }

    pub fn dequantize_value(&self, code: u32) -> f64 {
        f64::from(code) / f64::from(self.levels()) * (self.max - self.min) + self.min
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub codes: Vec<u32>,
}

/// Maps values to integer codes in `[0, 2^b - 1]`, clamping out-of-range
/// inputs to the bounds first.
pub fn quantize(x: &Tensor, q: &QuantParams) -> QuantizedTensor {
    QuantizedTensor {
        shape: x.shape().to_vec(),
        codes: x.data().iter().map(|&v| q.quantize_value(v)).collect(),
    }
}

pub fn dequantize(codes: &QuantizedTensor, q: &QuantParams) -> Result<Tensor> {
    Tensor::new(
        codes.shape.clone(),
        codes.codes.iter().map(|&c| q.dequantize_value(c)).collect(),
    )
}
