//! Float and bit-exact fixed-point reference engines.
//!
//! The fixed engine reproduces the generated hardware: inputs are
//! quantized into the input format, every product is exact, every sum is
//! exact then cast once into the accumulator, and activations cast into
//! the activation format.

mod fixed;
pub mod float;
mod reduce;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::fixedpoint::{dequantize, FixedPointValue};
use crate::model::{Activation, Model};
use crate::quantize::QuantizedModel;

pub use fixed::{
    activate, bdt_scores, quantize_input, route, sigmoid_index, FixedEngine, LutIndex, SigmoidLut,
};
pub use reduce::{reduce, tree_levels, AccumulationOrder};

#[derive(Debug, Error)]
pub enum EmulateError {
    #[error("dataset has {found} features, model expects {expected}")]
    FeatureCount { expected: usize, found: usize },
    #[error("model has no outputs")]
    NoOutputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Float,
    Fixed,
}

/// Cut-off applied to a single output score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threshold {
    Zero,
    Half,
}

impl Threshold {
    pub fn value(self) -> f64 {
        match self {
            Threshold::Zero => 0.0,
            Threshold::Half => 0.5,
        }
    }

    fn for_last(act: Option<Activation>) -> Self {
        if act == Some(Activation::Sigmoid) {
            Threshold::Half
        } else {
            Threshold::Zero
        }
    }

    /// Tree scores are logits; a network ending in a sigmoid yields
    /// probabilities.
    pub fn for_model(m: &Model) -> Self {
        match m {
            Model::Bdt(_) => Threshold::Zero,
            Model::Fcnn(f) => Self::for_last(f.layers.last().map(|l| l.activation)),
        }
    }

    pub fn for_quantized(m: &QuantizedModel) -> Self {
        match m {
            QuantizedModel::Bdt(_) => Threshold::Zero,
            QuantizedModel::Fcnn(f) => Self::for_last(f.layers.last().map(|l| l.activation)),
        }
    }
}

/// Predicted class and decision margin for float scores. A single score
/// picks class 1 iff it exceeds the threshold; otherwise the argmax wins
/// with ties going to the lowest index. The margin is the distance to the
/// threshold, or the gap between the two best scores.
pub fn decide_float(scores: &[f64], threshold: Threshold) -> (usize, f64) {
    match scores {
        [s] => (
            usize::from(*s > threshold.value()),
            (s - threshold.value()).abs(),
        ),
        _ => {
            let best = argmax_by(scores, |a, b| a.total_cmp(b));
            let runner_up = scores
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != best)
                .map(|(_, s)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            (best, scores[best] - runner_up)
        }
    }
}

/// Same rule as [`decide_float`], evaluated exactly on raw values.
pub fn decide_fixed(scores: &[FixedPointValue], threshold: Threshold) -> usize {
    match scores {
        [s] => {
            let above = match threshold {
                Threshold::Zero => s.raw() > 0,
                Threshold::Half => s.raw() * 2 > 1i128 << s.format().fractional_bits(),
            };
            usize::from(above)
        }
        _ => argmax_by(scores, |a, b| crate::fixedpoint::fxp_compare(*a, *b)),
    }
}

fn argmax_by<T>(xs: &[T], cmp: impl Fn(&T, &T) -> std::cmp::Ordering) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if cmp(&xs[i], &xs[best]).is_gt() {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class: usize,
    pub scores: Vec<f64>,
    /// Raw output values, for the fixed engine.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<i128>>,
    /// Decision margin, for the float engine.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

fn check(expected: usize, data: &Dataset) -> Result<(), EmulateError> {
    if data.n_features() != expected && !data.is_empty() {
        return Err(EmulateError::FeatureCount {
            expected,
            found: data.n_features(),
        });
    }
    Ok(())
}

pub fn emulate_float(m: &Model, data: &Dataset) -> Result<Vec<Prediction>, EmulateError> {
    check(m.n_features(), data)?;
    let threshold = Threshold::for_model(m);
    Ok(data
        .features
        .par_iter()
        .map(|x| {
            let scores = float::scores(m, x);
            let (class, margin) = decide_float(&scores, threshold);
            Prediction {
                class,
                scores,
                raw: None,
                margin: Some(margin),
            }
        })
        .collect())
}

pub fn emulate_fixed(
    q: &QuantizedModel,
    data: &Dataset,
    order: AccumulationOrder,
) -> Result<Vec<Prediction>, EmulateError> {
    check(q.n_features(), data)?;
    let engine = FixedEngine::new(q, order);
    let threshold = Threshold::for_quantized(q);
    Ok(data
        .features
        .par_iter()
        .map(|x| {
            let out = engine.run(x);
            Prediction {
                class: decide_fixed(&out, threshold),
                scores: out.iter().map(|v| dequantize(*v)).collect(),
                raw: Some(out.iter().map(FixedPointValue::raw).collect()),
                margin: None,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::FixedPointFormat;
    use crate::model::{BdtEnsemble, ClassTree, DenseLayer, FcnnModel, Objective, Tree};
    use crate::quantize::{
        quantize_bdt, quantize_fcnn, BdtFormats, LayerFormats, QuantizationConfig, SigmoidTable,
    };

    fn fmt(s: &str) -> FixedPointFormat {
        s.parse().unwrap()
    }

    fn stump() -> BdtEnsemble {
        BdtEnsemble {
            n_features: 1,
            n_classes: 1,
            trees: vec![ClassTree {
                class_index: 0,
                tree: Tree::stump(0, 0.5, -1.0, 1.0),
            }],
            base_scores: vec![0.0],
            objective: Objective::Sigmoid,
        }
    }

    fn bdt_cfg() -> QuantizationConfig {
        QuantizationConfig {
            input_fmt: fmt("fixed<8,2,s>"),
            bdt: Some(BdtFormats {
                threshold_fmt: fmt("fixed<8,2,s>"),
                leaf_fmt: fmt("fixed<8,2,s>"),
                accum_fmt: fmt("fixed<12,6,s>"),
            }),
            fcnn: vec![],
            sigmoid: SigmoidTable::default(),
        }
    }

    #[test]
    fn stump_routes_on_strict_less_than() {
        let m = stump();
        assert_eq!(float::bdt_scores(&m, &[0.4]), vec![-1.0]);
        assert_eq!(float::bdt_scores(&m, &[0.5]), vec![1.0]);
        let q = QuantizedModel::Bdt(quantize_bdt(&m, &bdt_cfg()).unwrap());
        let e = FixedEngine::new(&q, AccumulationOrder::Tree);
        assert_eq!(dequantize(e.run(&[0.4])[0]), -1.0);
        assert_eq!(dequantize(e.run(&[0.5])[0]), 1.0);
        assert_eq!(e.run(&[0.5])[0].format(), fmt("fixed<12,6,s>"));
    }

    #[test]
    fn emulation_over_dataset() {
        let m = Model::Bdt(stump());
        let data = Dataset::new(vec![vec![0.0], vec![0.9]], vec![0, 1]);
        let f = emulate_float(&m, &data).unwrap();
        assert_eq!(f.iter().map(|p| p.class).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(f[0].margin, Some(1.0));
        let Model::Bdt(b) = &m else { unreachable!() };
        let q = QuantizedModel::Bdt(quantize_bdt(b, &bdt_cfg()).unwrap());
        let x = emulate_fixed(&q, &data, AccumulationOrder::Tree).unwrap();
        assert_eq!(x.iter().map(|p| p.class).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(x[1].raw, Some(vec![64]));
        let wrong = Dataset::new(vec![vec![0.0, 1.0]], vec![0]);
        assert!(emulate_fixed(&q, &wrong, AccumulationOrder::Tree).is_err());
    }

    #[test]
    fn decisions() {
        assert_eq!(decide_float(&[0.0], Threshold::Zero), (0, 0.0));
        assert_eq!(decide_float(&[0.7], Threshold::Half).0, 1);
        assert_eq!(decide_float(&[1.0, 3.0, 3.0], Threshold::Zero), (1, 0.0));
        let half = |raw| FixedPointValue::new(raw, fmt("fixed<8,2,s>")).unwrap();
        assert_eq!(decide_fixed(&[half(32)], Threshold::Half), 0);
        assert_eq!(decide_fixed(&[half(33)], Threshold::Half), 1);
        assert_eq!(decide_fixed(&[half(1)], Threshold::Zero), 1);
        assert_eq!(
            decide_fixed(&[half(3), half(3), half(-1)], Threshold::Zero),
            0
        );
        let int = FixedPointValue::new(1, fmt("fixed<4,4,s>")).unwrap();
        assert_eq!(decide_fixed(&[int], Threshold::Half), 1);
    }

    #[test]
    fn sigmoid_index_matches_definition() {
        let t = SigmoidTable::default();
        // Bin width is 1/64 over [-8, 8).
        assert_eq!(sigmoid_index(0, 4, &t), LutIndex::Entry(512));
        assert_eq!(sigmoid_index(-1, 10, &t), LutIndex::Entry(511));
        assert_eq!(sigmoid_index(-8 * 16, 4, &t), LutIndex::Entry(0));
        assert_eq!(sigmoid_index(-8 * 16 - 1, 4, &t), LutIndex::Below);
        assert_eq!(sigmoid_index(8 * 16 - 1, 4, &t), LutIndex::Entry(1020));
        assert_eq!(sigmoid_index(8 * 1024 - 1, 10, &t), LutIndex::Entry(1023));
        assert_eq!(sigmoid_index(8 * 16, 4, &t), LutIndex::Above);
        for raw in -3000i128..3000 {
            let v = raw as f64 / 128.0;
            let expected = ((v + 8.0) / (16.0 / 1024.0)).floor() as i128;
            let got = match sigmoid_index(raw, 7, &t) {
                LutIndex::Below => -1,
                LutIndex::Entry(i) => i as i128,
                LutIndex::Above => 1024,
            };
            assert_eq!(got, expected.clamp(-1, 1024), "raw {raw}");
        }
    }

    #[test]
    fn dense_network_by_hand() {
        // y = sigmoid(relu(0.5 x0 - 0.25 x1 + 0.125)).
        let m = FcnnModel {
            layers: vec![
                DenseLayer {
                    weights: vec![vec![0.5, -0.25]],
                    bias: vec![0.125],
                    activation: Activation::Relu,
                },
                DenseLayer {
                    weights: vec![vec![1.0]],
                    bias: vec![0.0],
                    activation: Activation::Sigmoid,
                },
            ],
        };
        let lf = LayerFormats {
            weight_fmt: fmt("fixed<8,2,s>"),
            bias_fmt: fmt("fixed<8,2,s>"),
            accum_fmt: fmt("fixed<24,8,s,trn>"),
            activation_fmt: fmt("fixed<10,2,s,trn>"),
        };
        let cfg = QuantizationConfig {
            input_fmt: fmt("fixed<8,3,s>"),
            bdt: None,
            fcnn: vec![lf, lf],
            sigmoid: SigmoidTable::default(),
        };
        let q = QuantizedModel::Fcnn(quantize_fcnn(&m, &cfg, None).unwrap());
        let e = FixedEngine::new(&q, AccumulationOrder::Tree);
        let out = e.run(&[1.0, 1.0]);
        // Hidden value 0.375 lands in bin 512 + 24 with midpoint 0.3828125.
        let want = crate::fixedpoint::quantize_real(
            1.0 / (1.0 + (-0.3828125f64).exp()),
            fmt("fixed<10,2,s,rne>"),
        );
        assert_eq!(out[0].raw(), want.raw());
        // Negative pre-activation is clamped, giving sigmoid of the first
        // positive bin's midpoint.
        let zero = e.run(&[-1.0, 1.0]);
        assert_eq!(
            zero[0].raw(),
            SigmoidLut::new(cfg.sigmoid, lf.activation_fmt).contents[512]
        );
        let float = float::fcnn_outputs(&m, &[1.0, 1.0]);
        assert!((float[0] - dequantize(out[0])).abs() < 0.01);
    }
}
