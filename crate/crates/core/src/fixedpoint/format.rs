use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::FixedPointError;

/// How bits below the target LSB are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rounding {
    /// Floor. Costs nothing in hardware.
    TruncateTowardNegInf,
    /// Round half to even.
    RoundNearestEven,
}

/// What happens to values outside the representable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Overflow {
    Saturate,
    Wrap,
}

/// A two's-complement fixed-point format `fixed<W,I>`.
///
/// `integer_bits` includes the sign bit for signed formats, so a signed
/// value is `raw * 2^-(W-I)` with `raw` in `[-2^(W-1), 2^(W-1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointFormat {
    total_bits: u32,
    integer_bits: u32,
    signed: bool,
    rounding: Rounding,
    overflow: Overflow,
}

pub const MAX_TOTAL_BITS: u32 = 64;

impl FixedPointFormat {
    /// Builds a format with round-nearest-even and saturation.
    pub fn new(total_bits: u32, integer_bits: u32, signed: bool) -> Result<Self, FixedPointError> {
        if total_bits == 0 || total_bits > MAX_TOTAL_BITS {
            return Err(FixedPointError::InvalidWidth(total_bits));
        }
        if integer_bits > total_bits {
            return Err(FixedPointError::IntegerBitsExceedWidth {
                integer_bits,
                total_bits,
            });
        }
        Ok(Self {
            total_bits,
            integer_bits,
            signed,
            rounding: Rounding::RoundNearestEven,
            overflow: Overflow::Saturate,
        })
    }

    pub fn signed(total_bits: u32, integer_bits: u32) -> Result<Self, FixedPointError> {
        Self::new(total_bits, integer_bits, true)
    }

    pub fn unsigned(total_bits: u32, integer_bits: u32) -> Result<Self, FixedPointError> {
        Self::new(total_bits, integer_bits, false)
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn with_overflow(mut self, overflow: Overflow) -> Self {
        self.overflow = overflow;
        self
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn integer_bits(&self) -> u32 {
        self.integer_bits
    }

    pub fn fractional_bits(&self) -> u32 {
        self.total_bits - self.integer_bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub fn overflow(&self) -> Overflow {
        self.overflow
    }

    /// Smallest representable raw integer.
    pub fn min_raw(&self) -> i128 {
        if self.signed {
            -(1i128 << (self.total_bits - 1))
        } else {
            0
        }
    }

    /// Largest representable raw integer.
    pub fn max_raw(&self) -> i128 {
        if self.signed {
            (1i128 << (self.total_bits - 1)) - 1
        } else {
            (1i128 << self.total_bits) - 1
        }
    }

    pub fn contains_raw(&self, raw: i128) -> bool {
        raw >= self.min_raw() && raw <= self.max_raw()
    }

    /// Real value of one LSB.
    pub fn resolution(&self) -> f64 {
        (-(self.fractional_bits() as f64)).exp2()
    }

    /// Number of bits a hardware datapath needs for this format once
    /// unsigned values are zero-extended into a signed vector.
    pub fn signed_width(&self) -> u32 {
        if self.signed {
            self.total_bits
        } else {
            self.total_bits + 1
        }
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "fixed<{},{},{},{},{}>",
            self.total_bits,
            self.integer_bits,
            if self.signed { "s" } else { "u" },
            match self.rounding {
                Rounding::RoundNearestEven => "rne",
                Rounding::TruncateTowardNegInf => "trn",
            },
            match self.overflow {
                Overflow::Saturate => "sat",
                Overflow::Wrap => "wrap",
            }
        )
    }
}

impl FromStr for FixedPointFormat {
    type Err = FixedPointError;

    /// Parses `fixed<W,I,s|u>[,rne|trn][,sat|wrap]`. The options may also
    /// appear inside the angle brackets, as in `fixed<18,8,s,rne,sat>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FixedPointError::Parse(s.to_string());
        let body = s.trim().strip_prefix("fixed<").ok_or_else(bad)?;
        let (inner, rest) = body.split_once('>').ok_or_else(bad)?;
        let rest = rest.trim();
        let mut tokens: Vec<&str> = inner.split(',').map(str::trim).collect();
        if !rest.is_empty() {
            let rest = rest.strip_prefix(',').ok_or_else(bad)?;
            tokens.extend(rest.split(',').map(str::trim));
        }
        if tokens.len() < 2 {
            return Err(bad());
        }
        let total_bits: u32 = tokens[0].parse().map_err(|_| bad())?;
        let integer_bits: u32 = tokens[1].parse().map_err(|_| bad())?;
        let mut signed = None;
        let mut rounding = None;
        let mut overflow = None;
        for tok in &tokens[2..] {
            let slot_taken = match *tok {
                "s" => signed.replace(true).is_some(),
                "u" => signed.replace(false).is_some(),
                "rne" => rounding.replace(Rounding::RoundNearestEven).is_some(),
                "trn" => rounding.replace(Rounding::TruncateTowardNegInf).is_some(),
                "sat" => overflow.replace(Overflow::Saturate).is_some(),
                "wrap" => overflow.replace(Overflow::Wrap).is_some(),
                _ => return Err(bad()),
            };
            if slot_taken {
                return Err(bad());
            }
        }
        Ok(Self::new(total_bits, integer_bits, signed.unwrap_or(true))?
            .with_rounding(rounding.unwrap_or(Rounding::RoundNearestEven))
            .with_overflow(overflow.unwrap_or(Overflow::Saturate)))
    }
}

impl Serialize for FixedPointFormat {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FixedPointFormat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
