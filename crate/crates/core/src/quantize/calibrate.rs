use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    datapath_format, parameter_format, product_format, BdtFormats, LayerFormats,
    QuantizationConfig, QuantizeError, SigmoidTable,
};
use crate::dataset::Dataset;
use crate::emulate::float;
use crate::fixedpoint::{FixedPointFormat, MAX_TOTAL_BITS};
use crate::model::{Activation, BdtEnsemble, FcnnModel, Model, Node};

/// Total bit width per format role. The accumulator width is derived
/// from the operand formats when left unset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Widths {
    pub input: u32,
    pub threshold: u32,
    pub leaf: u32,
    pub weight: u32,
    pub bias: u32,
    pub activation: u32,
    #[serde(default)]
    pub accum: Option<u32>,
}

impl Widths {
    pub fn uniform(w: u32) -> Self {
        Self {
            input: w,
            threshold: w,
            leaf: w,
            weight: w,
            bias: w,
            activation: w,
            accum: None,
        }
    }
}

/// Signed integer bits covering `max_abs`: the smallest `k` with
/// `max_abs < 2^k`, plus a sign bit.
pub fn integer_bits_for(max_abs: f64) -> u32 {
    let mut k = 0;
    let mut bound = 1.0f64;
    while max_abs >= bound && k < 2000 {
        bound *= 2.0;
        k += 1;
    }
    k + 1
}

fn role_format(
    role: &str,
    width: u32,
    max_abs: f64,
    make: fn(u32, u32) -> Result<FixedPointFormat, QuantizeError>,
) -> Result<FixedPointFormat, QuantizeError> {
    if width < 2 {
        return Err(QuantizeError::InvalidConfig(format!(
            "{role} width must be at least 2"
        )));
    }
    let required = integer_bits_for(max_abs);
    if required > width - 1 {
        return Err(QuantizeError::WidthTooSmall {
            role: role.into(),
            required,
            width,
        });
    }
    make(width, required)
}

/// Accumulator holding every operand's fractional bits and an integer
/// range covering the largest absolute partial-sum bound seen.
fn accum_format(
    role: &str,
    width: Option<u32>,
    frac: u32,
    bound: f64,
) -> Result<FixedPointFormat, QuantizeError> {
    let int = integer_bits_for(bound);
    match width {
        Some(w) => {
            if int > w {
                return Err(QuantizeError::WidthTooSmall {
                    role: role.into(),
                    required: int,
                    width: w,
                });
            }
            if w - int < frac {
                return Err(QuantizeError::InvalidConfig(format!(
                    "{role}: width {w} leaves {} fractional bits, operands need {frac}",
                    w - int
                )));
            }
            datapath_format(w, int)
        }
        None => {
            let w = int + frac;
            if w > MAX_TOTAL_BITS {
                return Err(QuantizeError::InvalidConfig(format!(
                    "{role}: derived accumulator needs {w} bits (max {MAX_TOTAL_BITS})"
                )));
            }
            datapath_format(w, int)
        }
    }
}

fn max_abs<'a>(xs: impl IntoIterator<Item = &'a f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn input_format(calib: &Dataset, widths: &Widths) -> Result<FixedPointFormat, QuantizeError> {
    parameter_format_role(
        "input",
        widths.input,
        max_abs(calib.features.iter().flatten()),
    )
}

fn parameter_format_role(
    role: &str,
    width: u32,
    m: f64,
) -> Result<FixedPointFormat, QuantizeError> {
    role_format(role, width, m, parameter_format)
}

/// Picks every format from the model's parameters and a forward pass over
/// the calibration rows (absolute-max rule).
pub fn calibrate_formats(
    m: &Model,
    calib: &Dataset,
    widths: &Widths,
) -> Result<QuantizationConfig, QuantizeError> {
    if calib.is_empty() {
        return Err(QuantizeError::EmptyCalibration);
    }
    if calib.n_features() != m.n_features() {
        return Err(QuantizeError::FeatureCount {
            expected: m.n_features(),
            found: calib.n_features(),
        });
    }
    let violations = m.validate();
    if !violations.is_empty() {
        return Err(QuantizeError::InvalidModel(violations));
    }
    match m {
        Model::Bdt(b) => calibrate_bdt(b, calib, widths),
        Model::Fcnn(f) => calibrate_fcnn(f, calib, widths),
    }
}

fn calibrate_bdt(
    m: &BdtEnsemble,
    calib: &Dataset,
    widths: &Widths,
) -> Result<QuantizationConfig, QuantizeError> {
    let input_fmt = input_format(calib, widths)?;
    let nodes = m.trees.iter().flat_map(|t| &t.tree.nodes);
    let (mut thr, mut leaf) = (0.0f64, max_abs(&m.base_scores));
    for n in nodes {
        match n {
            Node::Internal { threshold, .. } => thr = thr.max(threshold.abs()),
            Node::Leaf { score } => leaf = leaf.max(score.abs()),
        }
    }
    let threshold_fmt = parameter_format_role("threshold", widths.threshold, thr)?;
    let leaf_fmt = parameter_format_role("leaf", widths.leaf, leaf)?;
    // Largest |base| + sum of |routed leaves| over rows and classes.
    let bound = calib
        .features
        .par_iter()
        .map(|x| {
            let mut sums: Vec<f64> = m.base_scores.iter().map(|b| b.abs()).collect();
            for ct in &m.trees {
                if let Node::Leaf { score } = ct.tree.nodes[ct.tree.route(x)] {
                    sums[ct.class_index] += score.abs();
                }
            }
            max_abs(&sums)
        })
        .reduce(|| 0.0, f64::max);
    let accum_fmt = accum_format(
        "accumulator",
        widths.accum,
        leaf_fmt.fractional_bits(),
        bound,
    )?;
    Ok(QuantizationConfig {
        input_fmt,
        bdt: Some(BdtFormats {
            threshold_fmt,
            leaf_fmt,
            accum_fmt,
        }),
        fcnn: Vec::new(),
        sigmoid: SigmoidTable::default(),
    })
}

/// Per-layer maxima seen over one forward pass.
#[derive(Clone, Default)]
struct LayerRange {
    partial: f64,
    activation: f64,
}

fn merge(mut a: Vec<LayerRange>, b: Vec<LayerRange>) -> Vec<LayerRange> {
    for (x, y) in a.iter_mut().zip(b) {
        x.partial = x.partial.max(y.partial);
        x.activation = x.activation.max(y.activation);
    }
    a
}

fn forward_ranges(m: &FcnnModel, x: &[f64]) -> Vec<LayerRange> {
    let mut h = x.to_vec();
    let mut out = Vec::with_capacity(m.layers.len());
    for layer in &m.layers {
        let partial = layer
            .weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, b)| row.iter().zip(&h).map(|(w, v)| (w * v).abs()).sum::<f64>() + b.abs())
            .fold(0.0, f64::max);
        h = float::dense(layer, &h)
            .into_iter()
            .map(|v| float::activate(layer.activation, v))
            .collect();
        out.push(LayerRange {
            partial,
            activation: max_abs(&h),
        });
    }
    out
}

fn calibrate_fcnn(
    m: &FcnnModel,
    calib: &Dataset,
    widths: &Widths,
) -> Result<QuantizationConfig, QuantizeError> {
    let input_fmt = input_format(calib, widths)?;
    let ranges = calib
        .features
        .par_iter()
        .map(|x| forward_ranges(m, x))
        .reduce(|| vec![LayerRange::default(); m.layers.len()], merge);
    let mut x_fmt = input_fmt;
    let mut layers = Vec::with_capacity(m.layers.len());
    for (k, (layer, range)) in m.layers.iter().zip(&ranges).enumerate() {
        let weight_fmt = parameter_format_role(
            &format!("layer {k} weight"),
            widths.weight,
            max_abs(layer.weights.iter().flatten()),
        )?;
        let bias_fmt = parameter_format_role(
            &format!("layer {k} bias"),
            widths.bias,
            max_abs(&layer.bias),
        )?;
        let product = product_format(x_fmt, weight_fmt)?;
        let frac = product.fractional_bits().max(bias_fmt.fractional_bits());
        let accum_fmt = accum_format(
            &format!("layer {k} accumulator"),
            widths.accum,
            frac,
            range.partial,
        )?;
        // A sigmoid output reaches 1.0 after table rounding.
        let act_max = if layer.activation == Activation::Sigmoid {
            1.0
        } else {
            range.activation
        };
        let activation_fmt = role_format(
            &format!("layer {k} activation"),
            widths.activation,
            act_max,
            datapath_format,
        )?;
        layers.push(LayerFormats {
            weight_fmt,
            bias_fmt,
            accum_fmt,
            activation_fmt,
        });
        x_fmt = activation_fmt;
    }
    Ok(QuantizationConfig {
        input_fmt,
        bdt: None,
        fcnn: layers,
        sigmoid: SigmoidTable::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassTree, DenseLayer, Objective, Tree};

    #[test]
    fn integer_bits_rule() {
        assert_eq!(integer_bits_for(0.0), 1);
        assert_eq!(integer_bits_for(0.999), 1);
        assert_eq!(integer_bits_for(1.0), 2);
        assert_eq!(integer_bits_for(5.0), 4);
        assert_eq!(integer_bits_for(1.9999999999999998), 2);
        assert_eq!(integer_bits_for(2.0), 3);
        // Oracle: ceil(log2(m + ulp)) + 1 for m >= 1.
        for m in [1.5f64, 3.0, 7.99, 8.0, 100.0, 1e6] {
            let oracle = (m + f64::EPSILON * m).log2().ceil() as u32 + 1;
            assert_eq!(integer_bits_for(m), oracle, "{m}");
        }
    }

    fn small_bdt(threshold: f64) -> Model {
        Model::Bdt(BdtEnsemble {
            n_features: 1,
            n_classes: 1,
            trees: vec![
                ClassTree {
                    class_index: 0,
                    tree: Tree::stump(0, threshold, -0.5, 0.75),
                },
                ClassTree {
                    class_index: 0,
                    tree: Tree::stump(0, -1.0, 0.25, 0.5),
                },
            ],
            base_scores: vec![0.1],
            objective: Objective::Sigmoid,
        })
    }

    #[test]
    fn bdt_formats_from_ranges() {
        let data = Dataset::new(vec![vec![-2.5], vec![1.0]], vec![0, 1]);
        let cfg = calibrate_formats(&small_bdt(5.0), &data, &Widths::uniform(10)).unwrap();
        let f = cfg.bdt.unwrap();
        assert_eq!(f.threshold_fmt.integer_bits(), 4);
        assert_eq!(f.leaf_fmt.integer_bits(), 1);
        assert_eq!(cfg.input_fmt.integer_bits(), 3);
        // Largest partial sum is 0.1 + 0.75 + 0.5 at x = 1.0.
        assert_eq!(f.accum_fmt.integer_bits(), 2);
        assert_eq!(f.accum_fmt.fractional_bits(), f.leaf_fmt.fractional_bits());
        let err = calibrate_formats(&small_bdt(100.0), &data, &Widths::uniform(2)).unwrap_err();
        assert!(matches!(err, QuantizeError::WidthTooSmall { .. }));
        let empty = Dataset::new(vec![], vec![]);
        assert!(matches!(
            calibrate_formats(&small_bdt(1.0), &empty, &Widths::uniform(8)),
            Err(QuantizeError::EmptyCalibration)
        ));
    }

    #[test]
    fn fcnn_formats_from_forward_pass() {
        let m = Model::Fcnn(FcnnModel {
            layers: vec![DenseLayer {
                weights: vec![vec![0.5, -0.9]],
                bias: vec![-3.0],
                activation: Activation::Relu,
            }],
        });
        let data = Dataset::new(vec![vec![1.0, 1.0], vec![0.5, 0.0]], vec![0, 1]);
        let cfg = calibrate_formats(&m, &data, &Widths::uniform(8)).unwrap();
        let l = cfg.fcnn[0];
        assert_eq!(l.weight_fmt.to_string(), "fixed<8,1,s,rne,sat>");
        assert_eq!(l.bias_fmt.integer_bits(), 3);
        // All-negative pre-activations through ReLU give an all-zero range.
        assert_eq!(l.activation_fmt.integer_bits(), 1);
        // Partial-sum bound 0.5 + 0.9 + 3.0 = 4.4.
        assert_eq!(l.accum_fmt.integer_bits(), 4);
        assert_eq!(l.accum_fmt.fractional_bits(), 6 + 7);
        cfg.check_fcnn(match &m {
            Model::Fcnn(f) => f,
            _ => unreachable!(),
        })
        .unwrap();
    }

    #[test]
    fn fixed_accumulator_width_must_fit() {
        let data = Dataset::new(vec![vec![1.0]], vec![0]);
        let mut w = Widths::uniform(10);
        w.accum = Some(6);
        assert!(calibrate_formats(&small_bdt(0.5), &data, &w).is_err());
        w.accum = Some(16);
        let cfg = calibrate_formats(&small_bdt(0.5), &data, &w).unwrap();
        assert_eq!(cfg.bdt.unwrap().accum_fmt.total_bits(), 16);
    }
}
