use serde::{Deserialize, Serialize};

use crate::fixedpoint::{cast, fxp_add, FixedPointFormat, FixedPointValue};

/// How a list of operands is summed into an accumulator.
///
/// Each pairwise add is exact and cast once into the accumulator format,
/// so orders only differ when an intermediate sum saturates or wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccumulationOrder {
    /// Balanced pairwise levels, matching the hardware adder tree.
    #[default]
    Tree,
    /// Left to right.
    Sequential,
}

/// Adder levels needed to reduce `n` operands in tree order.
pub fn tree_levels(n: usize) -> usize {
    let mut levels = 0;
    let mut k = n;
    while k > 1 {
        k = k.div_ceil(2);
        levels += 1;
    }
    levels
}

/// Sums `ops` into `accum`. Tree order pairs level by level as
/// `[a0+a1, a2+a3, ...]` with an odd last element passing through.
pub fn reduce(
    ops: &[FixedPointValue],
    accum: FixedPointFormat,
    order: AccumulationOrder,
) -> FixedPointValue {
    match ops {
        [] => FixedPointValue::zero(accum),
        [only] => cast(*only, accum),
        _ => match order {
            AccumulationOrder::Sequential => ops[2..]
                .iter()
                .fold(fxp_add(ops[0], ops[1], accum), |acc, v| {
                    fxp_add(acc, *v, accum)
                }),
            AccumulationOrder::Tree => {
                let mut level = ops.to_vec();
                while level.len() > 1 {
                    level = level
                        .chunks(2)
                        .map(|c| match c {
                            [a, b] => fxp_add(*a, *b, accum),
                            [a] => *a,
                            _ => unreachable!(),
                        })
                        .collect();
                }
                level[0]
            }
        },
    }
}
