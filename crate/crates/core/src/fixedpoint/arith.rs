//! Exact-then-cast arithmetic.
//!
//! Every operation computes its exact result as an integer mantissa `m`
//! with value `m * 2^-scale`, then casts once into the output format. The
//! mantissa lives in an `i128` whenever it fits; the rare unsigned 64-bit
//! cases that do not fit fall back to a big integer.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_integer::Integer;

use super::{FixedPointFormat, FixedPointValue, Overflow, Rounding};

/// `m << k`, or `None` if the result leaves `i128`.
pub(crate) fn checked_shl(m: i128, k: u32) -> Option<i128> {
    if m == 0 {
        return Some(0);
    }
    if k >= 127 {
        return None;
    }
    let r = m << k;
    (r >> k == m).then_some(r)
}

/// Rounds `m * 2^-k` to an integer.
fn round_shr(m: i128, k: u32, rounding: Rounding) -> i128 {
    if k == 0 {
        return m;
    }
    if k >= 128 {
        // |m| <= 2^127 <= 2^(k-1): the value lies in [-1/2, 1/2].
        return match rounding {
            Rounding::TruncateTowardNegInf => {
                if m < 0 {
                    -1
                } else {
                    0
                }
            }
            Rounding::RoundNearestEven => 0,
        };
    }
    let q = m >> k;
    match rounding {
        Rounding::TruncateTowardNegInf => q,
        Rounding::RoundNearestEven => {
            let rem = m.wrapping_sub(q.wrapping_shl(k));
            let half = 1i128 << (k - 1);
            if rem > half || (rem == half && q & 1 == 1) {
                q + 1
            } else {
                q
            }
        }
    }
}

/// Keeps the low `total_bits` bits of `q` and reinterprets them.
fn wrap_raw(q: i128, fmt: &FixedPointFormat) -> i128 {
    let w = fmt.total_bits();
    let low = (q as u128) & ((1u128 << w) - 1);
    if fmt.is_signed() && low >> (w - 1) == 1 {
        low as i128 - (1i128 << w)
    } else {
        low as i128
    }
}

fn fit(q: i128, fmt: &FixedPointFormat) -> i128 {
    if fmt.contains_raw(q) {
        return q;
    }
    match fmt.overflow() {
        Overflow::Saturate => q.clamp(fmt.min_raw(), fmt.max_raw()),
        Overflow::Wrap => wrap_raw(q, fmt),
    }
}

/// Casts the exact value `m * 2^-scale` into `fmt`.
pub(crate) fn cast_exact(m: i128, scale: i64, fmt: &FixedPointFormat) -> i128 {
    let target = fmt.fractional_bits() as i64;
    if scale >= target {
        let k = (scale - target).min(u32::MAX as i64) as u32;
        return fit(round_shr(m, k, fmt.rounding()), fmt);
    }
    let k = (target - scale).min(u32::MAX as i64) as u32;
    match checked_shl(m, k) {
        Some(q) => fit(q, fmt),
        None => match fmt.overflow() {
            Overflow::Saturate => {
                if m < 0 {
                    fmt.min_raw()
                } else {
                    fmt.max_raw()
                }
            }
            // Only the low total_bits (<= 64) bits survive, and those are
            // fully determined by the product modulo 2^128.
            Overflow::Wrap if k < 128 => wrap_raw(m.wrapping_shl(k), fmt),
            Overflow::Wrap => 0,
        },
    }
}

/// Big-integer counterpart of [`cast_exact`].
pub(crate) fn cast_exact_big(m: &BigInt, scale: i64, fmt: &FixedPointFormat) -> i128 {
    if let Ok(small) = i128::try_from(m) {
        return cast_exact(small, scale, fmt);
    }
    let target = fmt.fractional_bits() as i64;
    let q: BigInt = if scale > target {
        let k = (scale - target) as usize;
        let divisor = BigInt::from(1) << k;
        let (floor, rem) = m.div_mod_floor(&divisor);
        match fmt.rounding() {
            Rounding::TruncateTowardNegInf => floor,
            Rounding::RoundNearestEven => {
                let half = BigInt::from(1) << (k - 1);
                match rem.cmp(&half) {
                    Ordering::Greater => floor + 1,
                    Ordering::Equal if floor.is_odd() => floor + 1,
                    _ => floor,
                }
            }
        }
    } else {
        m << ((target - scale) as usize)
    };
    if let Ok(small) = i128::try_from(&q) {
        return fit(small, fmt);
    }
    match fmt.overflow() {
        Overflow::Saturate => {
            if q.sign() == num_bigint::Sign::Minus {
                fmt.min_raw()
            } else {
                fmt.max_raw()
            }
        }
        Overflow::Wrap => {
            let modulus = BigInt::from(1) << fmt.total_bits() as usize;
            let low = i128::try_from(q.mod_floor(&modulus)).expect("reduced below 2^64");
            wrap_raw(low, fmt)
        }
    }
}

/// Decomposes a finite double into `(mantissa, exponent)` with
/// `x == mantissa * 2^exponent` exactly.
fn decompose(x: f64) -> (i128, i64) {
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let biased = ((bits >> 52) & 0x7ff) as i64;
    let fraction = (bits & ((1u64 << 52) - 1)) as i128;
    let (mantissa, exponent) = if biased == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1i128 << 52), biased - 1075)
    };
    (if negative { -mantissa } else { mantissa }, exponent)
}

/// Casts a real number into `fmt` using the format's rounding and
/// overflow modes. `NaN` maps to zero and infinities to the range ends.
pub fn quantize_real(x: f64, fmt: FixedPointFormat) -> FixedPointValue {
    let raw = if x.is_nan() {
        0
    } else if x.is_infinite() {
        if x > 0.0 {
            fmt.max_raw()
        } else {
            fmt.min_raw()
        }
    } else {
        let (m, e) = decompose(x);
        cast_exact(m, -e, &fmt)
    };
    FixedPointValue::from_parts(raw, fmt)
}

/// `raw * 2^-fractional_bits` as a double. Exact whenever the raw value
/// fits in 53 bits.
pub fn dequantize(v: FixedPointValue) -> f64 {
    v.raw() as f64 * v.format().resolution()
}

/// Re-casts a value into another format.
pub fn cast(v: FixedPointValue, fmt: FixedPointFormat) -> FixedPointValue {
    let raw = cast_exact(v.raw(), v.format().fractional_bits() as i64, &fmt);
    FixedPointValue::from_parts(raw, fmt)
}

/// Aligns both raws to the finer of the two scales.
fn align(a: &FixedPointValue, b: &FixedPointValue) -> (Option<(i128, i128)>, i64) {
    let fa = a.format().fractional_bits();
    let fb = b.format().fractional_bits();
    let f = fa.max(fb);
    let pair = checked_shl(a.raw(), f - fa).zip(checked_shl(b.raw(), f - fb));
    (pair, f as i64)
}

fn align_big(a: &FixedPointValue, b: &FixedPointValue) -> (BigInt, BigInt) {
    let fa = a.format().fractional_bits();
    let fb = b.format().fractional_bits();
    let f = fa.max(fb);
    (
        BigInt::from(a.raw()) << (f - fa) as usize,
        BigInt::from(b.raw()) << (f - fb) as usize,
    )
}

/// Exact sum cast once into `out`.
pub fn fxp_add(a: FixedPointValue, b: FixedPointValue, out: FixedPointFormat) -> FixedPointValue {
    let (aligned, scale) = align(&a, &b);
    let raw = match aligned.and_then(|(x, y)| x.checked_add(y)) {
        Some(sum) => cast_exact(sum, scale, &out),
        None => {
            let (x, y) = align_big(&a, &b);
            cast_exact_big(&(x + y), scale, &out)
        }
    };
    FixedPointValue::from_parts(raw, out)
}

/// Exact product cast once into `out`.
pub fn fxp_mul(a: FixedPointValue, b: FixedPointValue, out: FixedPointFormat) -> FixedPointValue {
    let scale = (a.format().fractional_bits() + b.format().fractional_bits()) as i64;
    let raw = match a.raw().checked_mul(b.raw()) {
        Some(p) => cast_exact(p, scale, &out),
        None => cast_exact_big(
            &(BigInt::from(a.raw()) * BigInt::from(b.raw())),
            scale,
            &out,
        ),
    };
    FixedPointValue::from_parts(raw, out)
}

/// Orders two values by their exact real value, whatever their formats.
pub fn fxp_compare(a: FixedPointValue, b: FixedPointValue) -> Ordering {
    match align(&a, &b).0 {
        Some((x, y)) => x.cmp(&y),
        None => {
            let (x, y) = align_big(&a, &b);
            x.cmp(&y)
        }
    }
}
