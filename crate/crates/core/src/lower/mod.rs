//! Lowering of quantized models into pipelined netlists.
//!
//! Trees become a fully parallel comparator / one-hot select / adder tree
//! pipeline with II = 1. Dense layers get one multiplier per nonzero
//! weight, time-shared `R` ways when a reuse factor is given, followed by
//! a balanced adder tree and the activation. A register closes every
//! stage; values that do not depend on the input are left unregistered.

mod bdt;
mod fcnn;

use thiserror::Error;

use crate::emulate::tree_levels;
use crate::netlist::{Builder, CellKind, NetlistIr, WireId, WireType};
use crate::quantize::QuantizedModel;

pub use bdt::lower_bdt;
pub use fcnn::{layer_reuse, lower_fcnn};

#[derive(Debug, Error)]
pub enum LowerError {
    #[error("ensemble has no trees")]
    EmptyEnsemble,
    #[error("model has no layers")]
    EmptyModel,
    #[error("reuse factor must be at least 1")]
    InvalidReuse,
    #[error("{0}")]
    Format(String),
}

impl LowerError {
    pub fn code(&self) -> &'static str {
        match self {
            LowerError::EmptyEnsemble => "EmptyEnsemble",
            LowerError::EmptyModel => "EmptyModel",
            LowerError::InvalidReuse => "InvalidReuse",
            LowerError::Format(_) => "InvalidFormat",
        }
    }
}

/// Lowers either model kind. `reuse` only affects dense networks.
pub fn lower(q: &QuantizedModel, reuse: u32, name: &str) -> Result<NetlistIr, LowerError> {
    match q {
        QuantizedModel::Bdt(b) => lower_bdt(b, name),
        QuantizedModel::Fcnn(f) => lower_fcnn(f, reuse, name),
    }
}

/// A value in flight: its wire and whether it depends on the input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Operand {
    pub wire: WireId,
    pub timed: bool,
}

/// Registers a timed value; constants pass through.
pub(crate) fn stage_register(b: &mut Builder, v: Operand, stage: u32) -> Operand {
    if v.timed {
        Operand {
            wire: b.register(v.wire, stage, None),
            timed: true,
        }
    } else {
        v
    }
}

/// Balanced adder tree over `ops` arriving at cycle `t`, padded to `depth`
/// register levels. Pairing matches the emulator's tree order.
pub(crate) fn adder_tree(
    b: &mut Builder,
    ops: Vec<Operand>,
    accum: WireType,
    t: u32,
    depth: usize,
) -> Operand {
    let own = tree_levels(ops.len());
    let mut level = ops;
    let mut now = t;
    if level.len() == 1 {
        let v = level[0];
        let w = b.cell(CellKind::SatCast, vec![v.wire], accum, now, "cast");
        level[0] = Operand {
            wire: w,
            timed: v.timed,
        };
    }
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|c| match c {
                [x, y] => {
                    let s = Operand {
                        wire: b.cell(CellKind::Add, vec![x.wire, y.wire], accum, now, "add"),
                        timed: x.timed || y.timed,
                    };
                    stage_register(b, s, now + 1)
                }
                [x] => stage_register(b, *x, now + 1),
                _ => unreachable!(),
            })
            .collect();
        now += 1;
    }
    let mut v = level[0];
    for _ in own..depth {
        now += 1;
        v = stage_register(b, v, now);
    }
    v
}

/// Verilog-safe module name.
pub fn module_name(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if !s.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
        s.insert(0, 'm');
    }
    s
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::emulate::{quantize_input, AccumulationOrder, FixedEngine};
    use crate::fixedpoint::FixedPointFormat;
    use crate::model::{
        Activation, BdtEnsemble, ClassTree, DenseLayer, FcnnModel, Objective, Tree,
    };
    use crate::netlist::{interpret_netlist, run_stream, verify};
    use crate::quantize::{
        quantize_bdt, quantize_fcnn, BdtFormats, LayerFormats, QuantizationConfig, SigmoidTable,
    };

    fn fmt(s: &str) -> FixedPointFormat {
        s.parse().unwrap()
    }

    pub(crate) fn bdt(trees: Vec<Tree>) -> QuantizedModel {
        let m = BdtEnsemble {
            n_features: 2,
            n_classes: 1,
            trees: trees
                .into_iter()
                .map(|tree| ClassTree {
                    class_index: 0,
                    tree,
                })
                .collect(),
            base_scores: vec![0.25],
            objective: Objective::Sigmoid,
        };
        let cfg = QuantizationConfig {
            input_fmt: fmt("fixed<10,3,s>"),
            bdt: Some(BdtFormats {
                threshold_fmt: fmt("fixed<10,3,s>"),
                leaf_fmt: fmt("fixed<8,2,s>"),
                accum_fmt: fmt("fixed<12,6,s,trn>"),
            }),
            fcnn: vec![],
            sigmoid: SigmoidTable::default(),
        };
        QuantizedModel::Bdt(quantize_bdt(&m, &cfg).unwrap())
    }

    fn check_against_emulator(q: &QuantizedModel, n: &NetlistIr, xs: &[Vec<f64>]) {
        let engine = FixedEngine::new(q, AccumulationOrder::Tree);
        let fmt = q.config().input_fmt;
        let raws: Vec<Vec<i128>> = xs
            .iter()
            .map(|x| quantize_input(x, fmt).iter().map(|v| v.raw()).collect())
            .collect();
        let got = run_stream(n, &raws).unwrap();
        for (x, out) in xs.iter().zip(got) {
            let want: Vec<i128> = engine.run(x).iter().map(|v| v.raw()).collect();
            assert_eq!(out, want, "input {x:?}");
        }
    }

    #[test]
    fn single_stump_structure() {
        let q = bdt(vec![Tree::stump(0, 0.5, -1.0, 1.0)]);
        let n = lower(&q, 1, "stump").unwrap();
        verify(&n).unwrap();
        assert_eq!(n.latency_cycles, 4);
        assert_eq!(n.initiation_interval, 1);
        assert_eq!(n.cell_count("Comparator"), 1);
        assert_eq!(n.cell_count("AndReduce"), 2);
        assert_eq!(n.cell_count("Mux"), 2);
        assert_eq!(n.cell_count("OrReduce"), 1);
        assert_eq!(n.cell_count("Add"), 1);
        assert_eq!(
            interpret_netlist(&n, &[64, 0]).unwrap(),
            vec![(1.25 * 64.0) as i128]
        );
        check_against_emulator(&q, &n, &[vec![0.4, 0.0], vec![0.5, 1.0], vec![-3.0, 2.0]]);
    }

    #[test]
    fn eight_trees_latency() {
        let trees = (0..8)
            .map(|i| Tree::stump(i % 2, 0.1 * i as f64, -0.5, 0.25))
            .collect();
        let q = bdt(trees);
        let n = lower(&q, 1, "eight").unwrap();
        verify(&n).unwrap();
        assert_eq!(n.latency_cycles, 7);
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![0.05 * i as f64, 0.4 - 0.05 * i as f64])
            .collect();
        check_against_emulator(&q, &n, &xs);
    }

    #[test]
    fn constant_trees_stay_unregistered() {
        let q = bdt(vec![Tree::leaf(0.5), Tree::stump(1, 0.0, -1.0, 1.0)]);
        let n = lower(&q, 1, "mixed").unwrap();
        verify(&n).unwrap();
        assert_eq!(n.latency_cycles, 3 + 2);
        check_against_emulator(&q, &n, &[vec![0.0, -1.0], vec![0.0, 1.0]]);
        let only_leaves = bdt(vec![Tree::leaf(0.5)]);
        let n = lower(&only_leaves, 1, "leaves").unwrap();
        verify(&n).unwrap();
        check_against_emulator(&only_leaves, &n, &[vec![0.0, 0.0]]);
    }

    pub(crate) fn fcnn(layers: Vec<DenseLayer>) -> QuantizedModel {
        let lf = LayerFormats {
            weight_fmt: fmt("fixed<8,2,s>"),
            bias_fmt: fmt("fixed<8,2,s>"),
            accum_fmt: fmt("fixed<20,8,s,trn>"),
            activation_fmt: fmt("fixed<10,4,s,trn>"),
        };
        let cfg = QuantizationConfig {
            input_fmt: fmt("fixed<10,4,s>"),
            bdt: None,
            fcnn: vec![lf; layers.len()],
            sigmoid: SigmoidTable::default(),
        };
        QuantizedModel::Fcnn(quantize_fcnn(&FcnnModel { layers }, &cfg, None).unwrap())
    }

    pub(crate) fn dense(weights: Vec<Vec<f64>>, act: Activation) -> DenseLayer {
        let n = weights.len();
        DenseLayer {
            weights,
            bias: (0..n).map(|i| 0.125 * i as f64 - 0.25).collect(),
            activation: act,
        }
    }

    #[test]
    fn two_input_linear_layer() {
        let q = fcnn(vec![dense(vec![vec![0.5, -0.75]], Activation::Linear)]);
        let n = lower(&q, 1, "lin").unwrap();
        verify(&n).unwrap();
        assert_eq!(n.cell_count("Mul"), 2);
        assert_eq!(n.cell_count("Add"), 2);
        assert_eq!(n.initiation_interval, 1);
        assert_eq!(n.latency_cycles, 1 + 2 + 1);
        check_against_emulator(&q, &n, &[vec![1.0, 2.0], vec![-0.5, 0.25]]);
        let pruned = fcnn(vec![dense(vec![vec![0.5, 0.0]], Activation::Linear)]);
        assert_eq!(lower(&pruned, 1, "p").unwrap().cell_count("Mul"), 1);
    }

    #[test]
    fn reuse_shares_multipliers() {
        let w: Vec<f64> = (0..16).map(|i| 0.1 * i as f64 - 0.75).collect();
        let q = fcnn(vec![dense(vec![w], Activation::Relu)]);
        let xs: Vec<Vec<f64>> = (0..12)
            .map(|k| {
                (0..16)
                    .map(|i| ((i * 7 + k * 3) % 11) as f64 * 0.3 - 1.5)
                    .collect()
            })
            .collect();
        for (r, muls, ii) in [
            (1, 16, 1),
            (2, 8, 2),
            (3, 6, 3),
            (4, 4, 4),
            (16, 1, 16),
            (40, 1, 16),
        ] {
            let n = lower(&q, r, "reuse").unwrap();
            verify(&n).unwrap_or_else(|e| panic!("R={r}: {e}"));
            assert_eq!(n.cell_count("Mul"), muls, "R={r}");
            assert_eq!(n.initiation_interval, ii, "R={r}");
            assert_eq!(n.latency_cycles, ii + 5 + 1, "R={r}");
            check_against_emulator(&q, &n, &xs);
        }
        assert_eq!(lower(&q, 40, "r").unwrap().notes.len(), 1);
        assert!(matches!(lower(&q, 0, "r"), Err(LowerError::InvalidReuse)));
    }

    #[test]
    fn multi_layer_mixed_reuse_and_sigmoid() {
        let q = fcnn(vec![
            dense(
                vec![
                    vec![0.5, -0.25, 0.75],
                    vec![0.0, 0.0, 0.0],
                    vec![-1.0, 0.5, 0.25],
                ],
                Activation::Relu,
            ),
            dense(
                vec![vec![0.5, 1.0, -0.5], vec![0.25, 0.0, 0.5]],
                Activation::Sigmoid,
            ),
            dense(vec![vec![1.5, -1.0]], Activation::Linear),
        ]);
        let xs: Vec<Vec<f64>> = (0..25)
            .map(|k| {
                vec![
                    k as f64 * 0.3 - 3.0,
                    1.0 - k as f64 * 0.1,
                    (k % 5) as f64 - 2.0,
                ]
            })
            .collect();
        for r in 1..=4 {
            let n = lower(&q, r, "deep").unwrap();
            verify(&n).unwrap_or_else(|e| panic!("R={r}: {e}"));
            check_against_emulator(&q, &n, &xs);
        }
        assert_eq!(lower(&q, 1, "deep").unwrap().cell_count("LutRom"), 2);
    }

    #[test]
    fn module_names() {
        assert_eq!(module_name("my-model.v2"), "my_model_v2");
        assert_eq!(module_name("3x"), "m3x");
    }
}
