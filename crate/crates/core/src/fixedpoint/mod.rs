//! Deterministic fixed-point arithmetic with explicit formats.
//!
//! All operations compute the exact result first and round once into the
//! requested output format, so results are independent of evaluation
//! strategy and match the hardware cast logic bit for bit.

mod arith;
mod format;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arith::{cast, dequantize, fxp_add, fxp_compare, fxp_mul, quantize_real};
pub use format::{FixedPointFormat, Overflow, Rounding, MAX_TOTAL_BITS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixedPointError {
    #[error("total_bits must be in 1..=64, got {0}")]
    InvalidWidth(u32),
    #[error("integer_bits {integer_bits} exceeds total_bits {total_bits}")]
    IntegerBitsExceedWidth { integer_bits: u32, total_bits: u32 },
    #[error("malformed fixed-point format string `{0}`")]
    Parse(String),
    #[error("raw value {raw} does not fit {format}")]
    RawOutOfRange { raw: i128, format: FixedPointFormat },
}

/// A raw two's-complement integer tagged with its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointValue {
    raw: i128,
    format: FixedPointFormat,
}

impl FixedPointValue {
    pub fn new(raw: i128, format: FixedPointFormat) -> Result<Self, FixedPointError> {
        if !format.contains_raw(raw) {
            return Err(FixedPointError::RawOutOfRange { raw, format });
        }
        Ok(Self { raw, format })
    }

    pub(crate) fn from_parts(raw: i128, format: FixedPointFormat) -> Self {
        debug_assert!(format.contains_raw(raw), "{raw} outside {format}");
        Self { raw, format }
    }

    pub fn zero(format: FixedPointFormat) -> Self {
        Self { raw: 0, format }
    }

    pub fn raw(&self) -> i128 {
        self.raw
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn to_f64(self) -> f64 {
        dequantize(self)
    }

    pub fn is_negative(&self) -> bool {
        self.raw < 0
    }
}

impl fmt::Display for FixedPointValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (raw {} in {})", self.to_f64(), self.raw, self.format)
    }
}
