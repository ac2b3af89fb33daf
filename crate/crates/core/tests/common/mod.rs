//! Shared helpers for the integration tests: an exact rational oracle for
//! fixed-point casts and random generators for formats, values and models.
#![allow(dead_code)]

use fxhls::dataset::Dataset;
use fxhls::fixedpoint::{FixedPointFormat, FixedPointValue, Overflow, Rounding};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

pub fn pow2(k: u32) -> BigInt {
    BigInt::one() << k as usize
}

/// Exact real value of a fixed-point value.
pub fn exact(v: &FixedPointValue) -> BigRational {
    BigRational::new(BigInt::from(v.raw()), pow2(v.format().fractional_bits()))
}

/// Rounds and range-limits an exact rational the way the format says,
/// working from floor division of numerator by denominator only.
pub fn oracle_cast(v: &BigRational, fmt: FixedPointFormat) -> i128 {
    let num = v.numer() * pow2(fmt.fractional_bits());
    let den = v.denom();
    let (fl, rem) = num.div_mod_floor(den);
    let q = match fmt.rounding() {
        Rounding::TruncateTowardNegInf => fl,
        Rounding::RoundNearestEven => {
            let twice = rem * 2;
            if &twice > den || (&twice == den && fl.is_odd()) {
                fl + 1
            } else {
                fl
            }
        }
    };
    let lo = BigInt::from(fmt.min_raw());
    let hi = BigInt::from(fmt.max_raw());
    let out = if q >= lo && q <= hi {
        q
    } else {
        match fmt.overflow() {
            Overflow::Saturate => {
                if q < lo {
                    lo
                } else {
                    hi
                }
            }
            Overflow::Wrap => {
                let m = pow2(fmt.total_bits());
                let r = q.mod_floor(&m);
                if fmt.is_signed() && r >= pow2(fmt.total_bits() - 1) {
                    r - m
                } else {
                    r
                }
            }
        }
    };
    out.to_i128().expect("cast result fits i128")
}

pub fn exact_f64(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn random_format<R: Rng>(rng: &mut R) -> FixedPointFormat {
    let w = match rng.random_range(0..10) {
        0 => 64,
        1 => rng.random_range(56..=64),
        2 => rng.random_range(1..=4),
        _ => rng.random_range(1..=40),
    };
    let i = rng.random_range(0..=w);
    let signed = rng.random_bool(0.6);
    let rounding = if rng.random_bool(0.5) {
        Rounding::RoundNearestEven
    } else {
        Rounding::TruncateTowardNegInf
    };
    let overflow = if rng.random_bool(0.5) {
        Overflow::Saturate
    } else {
        Overflow::Wrap
    };
    FixedPointFormat::new(w, i, signed)
        .unwrap()
        .with_rounding(rounding)
        .with_overflow(overflow)
}

/// A raw in range, biased towards the ends of the range and zero.
pub fn random_raw<R: Rng>(rng: &mut R, fmt: FixedPointFormat) -> i128 {
    let (lo, hi) = (fmt.min_raw(), fmt.max_raw());
    match rng.random_range(0..8) {
        0 => lo,
        1 => hi,
        2 => 0.clamp(lo, hi),
        3 => (lo + 1).min(hi),
        4 => (hi - 1).max(lo),
        _ => rng.random_range(lo..=hi),
    }
}

pub fn random_value<R: Rng>(rng: &mut R, fmt: FixedPointFormat) -> FixedPointValue {
    FixedPointValue::new(random_raw(rng, fmt), fmt).unwrap()
}

/// A finite double around the format's scale, including exact ties
/// between representable values and values outside the range.
pub fn random_real<R: Rng>(rng: &mut R, fmt: FixedPointFormat) -> f64 {
    let f = fmt.fractional_bits() as i32;
    let i = fmt.integer_bits() as i32;
    match rng.random_range(0..4) {
        0 => {
            // Midpoint between two neighbours, exact when it fits a double.
            let k = rng.random_range(-(1i64 << 40)..(1i64 << 40)) >> rng.random_range(0..40);
            (k as f64 + 0.5) * (-(f as f64)).exp2()
        }
        1 => {
            let k: i64 = rng.random_range(-(1 << 20)..(1 << 20));
            k as f64 * (-(f as f64)).exp2()
        }
        _ => {
            let e = rng.random_range(-f - 12..=i + 4);
            let m: f64 = rng.random_range(-1.0..1.0);
            m * (e as f64).exp2()
        }
    }
}

/// Uniform random rows in `[-span, span]` with random binary labels.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, n_features: usize, span: f64) -> Dataset {
    let features = (0..n)
        .map(|_| {
            (0..n_features)
                .map(|_| rng.random_range(-span..span))
                .collect()
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..2)).collect();
    Dataset::new(features, labels)
}

pub fn is_zero(v: &BigRational) -> bool {
    v.is_zero()
}

/// The single-stump ensemble behind the golden Verilog file.
pub fn golden_stump() -> fxhls::quantize::QuantizedModel {
    use fxhls::model::{BdtEnsemble, ClassTree, Objective, Tree};
    use fxhls::quantize::{
        quantize_bdt, BdtFormats, QuantizationConfig, QuantizedModel, SigmoidTable,
    };
    let m = BdtEnsemble {
        n_features: 1,
        n_classes: 1,
        trees: vec![ClassTree {
            class_index: 0,
            tree: Tree::stump(0, 0.5, -1.0, 1.0),
        }],
        base_scores: vec![0.0],
        objective: Objective::Sigmoid,
    };
    let cfg = QuantizationConfig {
        input_fmt: "fixed<8,3,s>".parse().unwrap(),
        bdt: Some(BdtFormats {
            threshold_fmt: "fixed<8,3,s>".parse().unwrap(),
            leaf_fmt: "fixed<8,3,s>".parse().unwrap(),
            accum_fmt: "fixed<10,4,s,trn>".parse().unwrap(),
        }),
        fcnn: vec![],
        sigmoid: SigmoidTable::default(),
    };
    QuantizedModel::Bdt(quantize_bdt(&m, &cfg).unwrap())
}

pub fn golden_path(file: &str) -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(file)
}
