//! Post-training transforms: format calibration, parameter quantization
//! and one-shot magnitude pruning.

mod calibrate;
mod prune;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{
    quantize_real, FixedPointError, FixedPointFormat, FixedPointValue, Overflow, Rounding,
    MAX_TOTAL_BITS,
};
use crate::ingest::{self, IngestError};
use crate::model::{Activation, BdtEnsemble, FcnnModel, Model, Node, Objective, Violation};

pub use calibrate::{calibrate_formats, integer_bits_for, Widths};
pub use prune::{prune_fcnn, PruneMask, PruningConfig};

#[derive(Debug, Error)]
pub enum QuantizeError {
    #[error("{role}: {required} integer bits needed but width is {width}")]
    WidthTooSmall {
        role: String,
        required: u32,
        width: u32,
    },
    #[error("{0}")]
    InvalidConfig(String),
    #[error("calibration dataset is empty")]
    EmptyCalibration,
    #[error("calibration data has {found} features, model expects {expected}")]
    FeatureCount { expected: usize, found: usize },
    #[error("model is invalid: {0:?}")]
    InvalidModel(Vec<Violation>),
    #[error(transparent)]
    Format(#[from] FixedPointError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("quantized model file: {0}")]
    File(String),
}

impl QuantizeError {
    pub fn code(&self) -> &'static str {
        match self {
            QuantizeError::WidthTooSmall { .. } => "WidthTooSmall",
            QuantizeError::InvalidConfig(_) => "InvalidConfig",
            QuantizeError::EmptyCalibration => "EmptyCalibration",
            QuantizeError::FeatureCount { .. } => "FeatureCount",
            QuantizeError::InvalidModel(_) => "InvalidModel",
            QuantizeError::Format(_) => "InvalidFormat",
            QuantizeError::Ingest(e) => e.code(),
            QuantizeError::File(_) => "MalformedQuantizedModel",
        }
    }
}

/// Sigmoid lookup table: `entries` bins spanning `[-half_range, half_range)`.
/// Both must be powers of two so the bin index is a pure shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmoidTable {
    pub entries: u32,
    pub half_range: f64,
}

impl Default for SigmoidTable {
    fn default() -> Self {
        Self {
            entries: 1024,
            half_range: 8.0,
        }
    }
}

impl SigmoidTable {
    pub fn entries_log2(&self) -> u32 {
        self.entries.trailing_zeros()
    }

    pub fn half_range_log2(&self) -> i32 {
        self.half_range.log2() as i32
    }

    pub fn check(&self) -> Result<(), QuantizeError> {
        let e_ok = self.entries.is_power_of_two() && (2..=1 << 16).contains(&self.entries);
        let r = self.half_range.log2();
        let r_ok = self.half_range > 0.0 && r.fract() == 0.0 && (-16.0..=16.0).contains(&r);
        if !(e_ok && r_ok) {
            return Err(QuantizeError::InvalidConfig(format!(
                "sigmoid table needs power-of-two entries (2..=65536) and half_range, got {} / {}",
                self.entries, self.half_range
            )));
        }
        Ok(())
    }

    /// Table contents: round-nearest-even of the sigmoid at each bin's
    /// midpoint, cast into `out`.
    pub fn contents(&self, out: FixedPointFormat) -> Vec<i128> {
        let rne = out.with_rounding(Rounding::RoundNearestEven);
        let step = 2.0 * self.half_range / self.entries as f64;
        (0..self.entries)
            .map(|j| {
                let mid = -self.half_range + (j as f64 + 0.5) * step;
                quantize_real(1.0 / (1.0 + (-mid).exp()), rne).raw()
            })
            .collect()
    }

    /// Raw outputs used below and above the table range.
    pub fn saturation_values(&self, out: FixedPointFormat) -> (i128, i128) {
        let rne = out.with_rounding(Rounding::RoundNearestEven);
        (quantize_real(0.0, rne).raw(), quantize_real(1.0, rne).raw())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BdtFormats {
    pub threshold_fmt: FixedPointFormat,
    pub leaf_fmt: FixedPointFormat,
    pub accum_fmt: FixedPointFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFormats {
    pub weight_fmt: FixedPointFormat,
    pub bias_fmt: FixedPointFormat,
    pub accum_fmt: FixedPointFormat,
    pub activation_fmt: FixedPointFormat,
}

/// Every fixed-point format a quantized model uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizationConfig {
    pub input_fmt: FixedPointFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bdt: Option<BdtFormats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fcnn: Vec<LayerFormats>,
    #[serde(default)]
    pub sigmoid: SigmoidTable,
}

/// Full-precision product format of two operands.
pub fn product_format(
    a: FixedPointFormat,
    b: FixedPointFormat,
) -> Result<FixedPointFormat, QuantizeError> {
    let width = a.total_bits() + b.total_bits();
    if width > MAX_TOTAL_BITS {
        return Err(QuantizeError::InvalidConfig(format!(
            "product of {a} and {b} needs {width} bits (max {MAX_TOTAL_BITS})"
        )));
    }
    Ok(FixedPointFormat::new(
        width,
        a.integer_bits() + b.integer_bits(),
        a.is_signed() || b.is_signed(),
    )?
    .with_rounding(Rounding::TruncateTowardNegInf))
}

fn require_accum_precision(
    what: &str,
    accum: FixedPointFormat,
    operands: &[FixedPointFormat],
) -> Result<(), QuantizeError> {
    let needed = operands
        .iter()
        .map(|f| f.fractional_bits())
        .max()
        .unwrap_or(0);
    if accum.fractional_bits() < needed {
        return Err(QuantizeError::InvalidConfig(format!(
            "{what}: accumulator {accum} has {} fractional bits, operands need {needed}",
            accum.fractional_bits()
        )));
    }
    Ok(())
}

impl QuantizationConfig {
    pub fn bdt_formats(&self) -> Result<&BdtFormats, QuantizeError> {
        self.bdt
            .as_ref()
            .ok_or_else(|| QuantizeError::InvalidConfig("config has no bdt formats".into()))
    }

    /// Checks the config against an ensemble.
    pub fn check_bdt(&self) -> Result<(), QuantizeError> {
        let f = self.bdt_formats()?;
        require_accum_precision("bdt", f.accum_fmt, &[f.leaf_fmt])
    }

    /// Checks the config against a network, returning each layer's
    /// product format.
    pub fn check_fcnn(&self, m: &FcnnModel) -> Result<Vec<FixedPointFormat>, QuantizeError> {
        if self.fcnn.len() != m.layers.len() {
            return Err(QuantizeError::InvalidConfig(format!(
                "config has {} layer entries, model has {} layers",
                self.fcnn.len(),
                m.layers.len()
            )));
        }
        self.sigmoid.check()?;
        let mut x_fmt = self.input_fmt;
        let mut products = Vec::with_capacity(m.layers.len());
        for (k, lf) in self.fcnn.iter().enumerate() {
            let p = product_format(x_fmt, lf.weight_fmt)?;
            require_accum_precision(&format!("layer {k}"), lf.accum_fmt, &[p, lf.bias_fmt])?;
            products.push(p);
            x_fmt = lf.activation_fmt;
        }
        Ok(products)
    }
}

fn check_fits(role: &str, value: f64, fmt: FixedPointFormat) -> Result<(), QuantizeError> {
    let needed = integer_bits_for(value.abs());
    let available = if fmt.is_signed() {
        fmt.integer_bits()
    } else if value < 0.0 {
        return Err(QuantizeError::WidthTooSmall {
            role: role.into(),
            required: needed,
            width: fmt.total_bits(),
        });
    } else {
        fmt.integer_bits() + 1
    };
    if needed > available {
        return Err(QuantizeError::WidthTooSmall {
            role: role.into(),
            required: needed,
            width: fmt.total_bits(),
        });
    }
    Ok(())
}

fn quantize_param(role: &str, value: f64, fmt: FixedPointFormat) -> Result<i128, QuantizeError> {
    check_fits(role, value, fmt)?;
    Ok(quantize_real(value, fmt.with_rounding(Rounding::RoundNearestEven)).raw())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QNodeRepr", into = "QNodeRepr")]
pub enum QNode {
    Leaf {
        leaf: i128,
    },
    Split {
        feature: usize,
        threshold: i128,
        left: usize,
        right: usize,
    },
}

/// Flat wire form of [`QNode`]: `{"leaf"}` or
/// `{"feature", "threshold", "left", "right"}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QNodeRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leaf: Option<i128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<i128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<usize>,
}

impl From<QNode> for QNodeRepr {
    fn from(n: QNode) -> Self {
        match n {
            QNode::Leaf { leaf } => QNodeRepr {
                leaf: Some(leaf),
                feature: None,
                threshold: None,
                left: None,
                right: None,
            },
            QNode::Split {
                feature,
                threshold,
                left,
                right,
            } => QNodeRepr {
                leaf: None,
                feature: Some(feature),
                threshold: Some(threshold),
                left: Some(left),
                right: Some(right),
            },
        }
    }
}

impl TryFrom<QNodeRepr> for QNode {
    type Error = String;

    fn try_from(r: QNodeRepr) -> Result<Self, String> {
        match r {
            QNodeRepr {
                leaf: Some(leaf),
                feature: None,
                threshold: None,
                left: None,
                right: None,
            } => Ok(QNode::Leaf { leaf }),
            QNodeRepr {
                leaf: None,
                feature: Some(feature),
                threshold: Some(threshold),
                left: Some(left),
                right: Some(right),
            } => Ok(QNode::Split {
                feature,
                threshold,
                left,
                right,
            }),
            _ => Err("node must be a leaf or a complete split".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTree {
    pub class_index: usize,
    pub nodes: Vec<QNode>,
}

/// An ensemble with thresholds in `threshold_fmt` and leaf/base scores in
/// `leaf_fmt`. Topology is identical to the source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedBdt {
    pub n_features: usize,
    pub n_classes: usize,
    pub objective: Objective,
    pub trees: Vec<QTree>,
    pub base_scores: Vec<i128>,
    pub config: QuantizationConfig,
}

impl QuantizedBdt {
    pub fn formats(&self) -> BdtFormats {
        *self
            .config
            .bdt
            .as_ref()
            .expect("quantized bdt carries bdt formats")
    }

    pub fn threshold(&self, raw: i128) -> FixedPointValue {
        FixedPointValue::new(raw, self.formats().threshold_fmt).expect("raw fits format")
    }

    pub fn leaf(&self, raw: i128) -> FixedPointValue {
        FixedPointValue::new(raw, self.formats().leaf_fmt).expect("raw fits format")
    }

    pub fn trees_per_class(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for t in &self.trees {
            counts[t.class_index] += 1;
        }
        counts
    }

    /// Leaf ids with their root paths, as in [`crate::model::Tree::leaf_paths`].
    pub fn leaf_paths(tree: &QTree) -> Vec<(usize, Vec<(usize, bool)>)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((id, path)) = stack.pop() {
            match tree.nodes[id] {
                QNode::Leaf { .. } => out.push((id, path)),
                QNode::Split { left, right, .. } => {
                    let mut rp = path.clone();
                    rp.push((id, false));
                    stack.push((right, rp));
                    let mut lp = path;
                    lp.push((id, true));
                    stack.push((left, lp));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLayer {
    pub weights: Vec<Vec<i128>>,
    pub bias: Vec<i128>,
    pub activation: Activation,
    /// `true` where pruning zeroed the weight.
    pub prune_mask: Vec<Vec<bool>>,
}

impl QLayer {
    pub fn n_in(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn n_out(&self) -> usize {
        self.weights.len()
    }

    /// Nonzero weights per neuron, in input order.
    pub fn nonzero_inputs(&self, neuron: usize) -> Vec<usize> {
        (0..self.n_in())
            .filter(|&i| self.weights[neuron][i] != 0)
            .collect()
    }

    pub fn nonzero_count(&self) -> usize {
        self.weights.iter().flatten().filter(|w| **w != 0).count()
    }

    pub fn max_fan_in(&self) -> usize {
        (0..self.n_out())
            .map(|n| self.nonzero_inputs(n).len())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedFcnn {
    pub layers: Vec<QLayer>,
    pub config: QuantizationConfig,
}

impl QuantizedFcnn {
    pub fn n_inputs(&self) -> usize {
        self.layers.first().map_or(0, QLayer::n_in)
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, QLayer::n_out)
    }

    /// Format of the values feeding layer `k`.
    pub fn layer_input_fmt(&self, k: usize) -> FixedPointFormat {
        if k == 0 {
            self.config.input_fmt
        } else {
            self.config.fcnn[k - 1].activation_fmt
        }
    }
}

/// Quantizes thresholds, leaf scores and base scores.
pub fn quantize_bdt(
    m: &BdtEnsemble,
    cfg: &QuantizationConfig,
) -> Result<QuantizedBdt, QuantizeError> {
    let violations = crate::model::validate_bdt(m);
    if !violations.is_empty() {
        return Err(QuantizeError::InvalidModel(violations));
    }
    cfg.check_bdt()?;
    let f = cfg.bdt_formats()?;
    let trees = m
        .trees
        .iter()
        .enumerate()
        .map(|(t, ct)| {
            let nodes = ct
                .tree
                .nodes
                .iter()
                .map(|n| {
                    Ok(match *n {
                        Node::Leaf { score } => QNode::Leaf {
                            leaf: quantize_param(&format!("tree {t} leaf"), score, f.leaf_fmt)?,
                        },
                        Node::Internal {
                            feature,
                            threshold,
                            left,
                            right,
                        } => QNode::Split {
                            feature,
                            threshold: quantize_param(
                                &format!("tree {t} threshold"),
                                threshold,
                                f.threshold_fmt,
                            )?,
                            left,
                            right,
                        },
                    })
                })
                .collect::<Result<_, QuantizeError>>()?;
            Ok(QTree {
                class_index: ct.class_index,
                nodes,
            })
        })
        .collect::<Result<_, QuantizeError>>()?;
    let base_scores = m
        .base_scores
        .iter()
        .map(|b| quantize_param("base score", *b, f.leaf_fmt))
        .collect::<Result<_, _>>()?;
    Ok(QuantizedBdt {
        n_features: m.n_features,
        n_classes: m.n_classes,
        objective: m.objective,
        trees,
        base_scores,
        config: cfg.clone(),
    })
}

/// Quantizes weights and biases per layer. `masks`, when given, records
/// which weights pruning removed.
pub fn quantize_fcnn(
    m: &FcnnModel,
    cfg: &QuantizationConfig,
    masks: Option<&[PruneMask]>,
) -> Result<QuantizedFcnn, QuantizeError> {
    let violations = crate::model::validate_fcnn(m);
    if !violations.is_empty() {
        return Err(QuantizeError::InvalidModel(violations));
    }
    if m.layers.is_empty() {
        return Err(QuantizeError::InvalidConfig("model has no layers".into()));
    }
    cfg.check_fcnn(m)?;
    if let Some(ms) = masks {
        if ms.len() != m.layers.len() {
            return Err(QuantizeError::InvalidConfig(
                "one prune mask per layer required".into(),
            ));
        }
    }
    let layers = m
        .layers
        .iter()
        .zip(&cfg.fcnn)
        .enumerate()
        .map(|(k, (layer, lf))| {
            let weights = layer
                .weights
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|w| quantize_param(&format!("layer {k} weight"), *w, lf.weight_fmt))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            let bias = layer
                .bias
                .iter()
                .map(|b| quantize_param(&format!("layer {k} bias"), *b, lf.bias_fmt))
                .collect::<Result<Vec<_>, _>>()?;
            let prune_mask = match masks {
                Some(ms) => {
                    let mask = &ms[k].pruned;
                    if mask.len() != layer.n_out() || mask.iter().any(|r| r.len() != layer.n_in()) {
                        return Err(QuantizeError::InvalidConfig(format!(
                            "layer {k}: prune mask shape differs from weights"
                        )));
                    }
                    mask.clone()
                }
                None => vec![vec![false; layer.n_in()]; layer.n_out()],
            };
            Ok(QLayer {
                weights,
                bias,
                activation: layer.activation,
                prune_mask,
            })
        })
        .collect::<Result<_, QuantizeError>>()?;
    Ok(QuantizedFcnn {
        layers,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantizedModel {
    Bdt(QuantizedBdt),
    Fcnn(QuantizedFcnn),
}

impl QuantizedModel {
    pub fn config(&self) -> &QuantizationConfig {
        match self {
            QuantizedModel::Bdt(m) => &m.config,
            QuantizedModel::Fcnn(m) => &m.config,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            QuantizedModel::Bdt(m) => m.n_features,
            QuantizedModel::Fcnn(m) => m.n_inputs(),
        }
    }
}

/// Quantizes either model kind.
pub fn quantize_model(
    m: &Model,
    cfg: &QuantizationConfig,
    masks: Option<&[PruneMask]>,
) -> Result<QuantizedModel, QuantizeError> {
    Ok(match m {
        Model::Bdt(b) => QuantizedModel::Bdt(quantize_bdt(b, cfg)?),
        Model::Fcnn(f) => QuantizedModel::Fcnn(quantize_fcnn(f, cfg, masks)?),
    })
}

const QUANTIZED_BDT: &str = "quantized_bdt";
const QUANTIZED_FCNN: &str = "quantized_fcnn";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantizedFile {
    schema_version: String,
    model_kind: String,
    payload: serde_json::Value,
    /// The float model the parameters came from, as an interchange document.
    source: serde_json::Value,
}

/// Serializes a quantized model together with its float source.
pub fn write_quantized(q: &QuantizedModel, source: &Model) -> Result<Vec<u8>, QuantizeError> {
    let source_doc: serde_json::Value = serde_json::from_slice(&ingest::write_model(source)?)
        .map_err(|e| QuantizeError::File(e.to_string()))?;
    let file = QuantizedFile {
        schema_version: ingest::SCHEMA_VERSION.into(),
        model_kind: match q {
            QuantizedModel::Bdt(_) => QUANTIZED_BDT,
            QuantizedModel::Fcnn(_) => QUANTIZED_FCNN,
        }
        .into(),
        payload: match q {
            QuantizedModel::Bdt(b) => serde_json::to_value(b),
            QuantizedModel::Fcnn(f) => serde_json::to_value(f),
        }
        .map_err(|e| QuantizeError::File(e.to_string()))?,
        source: source_doc,
    };
    let value = serde_json::to_value(&file).map_err(|e| QuantizeError::File(e.to_string()))?;
    let mut bytes =
        serde_json::to_vec_pretty(&value).map_err(|e| QuantizeError::File(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Reads a quantized model file, re-checking every raw against its format.
pub fn read_quantized(bytes: &[u8]) -> Result<(QuantizedModel, Model), QuantizeError> {
    let file: QuantizedFile =
        serde_json::from_slice(bytes).map_err(|e| QuantizeError::File(e.to_string()))?;
    if file.schema_version != ingest::SCHEMA_VERSION {
        return Err(IngestError::UnknownSchemaVersion(file.schema_version).into());
    }
    let source_bytes =
        serde_json::to_vec(&file.source).map_err(|e| QuantizeError::File(e.to_string()))?;
    let source = ingest::parse_model(&source_bytes)?;
    let err = |e: serde_json::Error| QuantizeError::File(e.to_string());
    let q = match file.model_kind.as_str() {
        QUANTIZED_BDT => QuantizedModel::Bdt(serde_json::from_value(file.payload).map_err(err)?),
        QUANTIZED_FCNN => QuantizedModel::Fcnn(serde_json::from_value(file.payload).map_err(err)?),
        other => return Err(QuantizeError::File(format!("unknown model_kind `{other}`"))),
    };
    check_quantized(&q, &source)?;
    Ok((q, source))
}

/// Checks that a quantized model matches its source topology and every
/// raw value fits its declared format.
pub fn check_quantized(q: &QuantizedModel, source: &Model) -> Result<(), QuantizeError> {
    let bad = |s: String| Err(QuantizeError::File(s));
    let fits = |raw: i128, fmt: FixedPointFormat, what: &str| -> Result<(), QuantizeError> {
        if fmt.contains_raw(raw) {
            Ok(())
        } else {
            Err(QuantizeError::File(format!(
                "{what}: raw {raw} outside {fmt}"
            )))
        }
    };
    match (q, source) {
        (QuantizedModel::Bdt(b), Model::Bdt(s)) => {
            b.config.check_bdt()?;
            let f = b.formats();
            if b.trees.len() != s.trees.len()
                || b.n_classes != s.n_classes
                || b.n_features != s.n_features
                || b.base_scores.len() != s.base_scores.len()
            {
                return bad("topology differs from source".into());
            }
            for (qt, st) in b.trees.iter().zip(&s.trees) {
                if qt.class_index != st.class_index || qt.nodes.len() != st.tree.nodes.len() {
                    return bad("tree topology differs from source".into());
                }
                for (qn, sn) in qt.nodes.iter().zip(&st.tree.nodes) {
                    match (qn, sn) {
                        (QNode::Leaf { leaf }, Node::Leaf { .. }) => {
                            fits(*leaf, f.leaf_fmt, "leaf")?
                        }
                        (
                            QNode::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            },
                            Node::Internal {
                                feature: sf,
                                left: sl,
                                right: sr,
                                ..
                            },
                        ) if feature == sf && left == sl && right == sr => {
                            fits(*threshold, f.threshold_fmt, "threshold")?
                        }
                        _ => return bad("node differs from source".into()),
                    }
                }
            }
            for raw in &b.base_scores {
                fits(*raw, f.leaf_fmt, "base score")?;
            }
        }
        (QuantizedModel::Fcnn(q), Model::Fcnn(s)) => {
            q.config.check_fcnn(s)?;
            if q.layers.len() != s.layers.len() {
                return bad("layer count differs from source".into());
            }
            for (k, (ql, sl)) in q.layers.iter().zip(&s.layers).enumerate() {
                let lf = q.config.fcnn[k];
                let shape_ok = ql.n_out() == sl.n_out()
                    && ql.weights.iter().all(|r| r.len() == sl.n_in())
                    && ql.prune_mask.len() == sl.n_out()
                    && ql.prune_mask.iter().all(|r| r.len() == sl.n_in())
                    && ql.bias.len() == sl.bias.len()
                    && ql.activation == sl.activation;
                if !shape_ok {
                    return bad(format!("layer {k} shape differs from source"));
                }
                for w in ql.weights.iter().flatten() {
                    fits(*w, lf.weight_fmt, "weight")?;
                }
                for b in &ql.bias {
                    fits(*b, lf.bias_fmt, "bias")?;
                }
            }
        }
        _ => return bad("quantized model kind differs from source".into()),
    }
    Ok(())
}

/// Default rounding and overflow for parameter formats.
pub(crate) fn parameter_format(
    width: u32,
    integer_bits: u32,
) -> Result<FixedPointFormat, QuantizeError> {
    Ok(FixedPointFormat::signed(width, integer_bits)?
        .with_rounding(Rounding::RoundNearestEven)
        .with_overflow(Overflow::Saturate))
}

/// Default rounding and overflow for datapath formats.
pub(crate) fn datapath_format(
    width: u32,
    integer_bits: u32,
) -> Result<FixedPointFormat, QuantizeError> {
    Ok(FixedPointFormat::signed(width, integer_bits)?
        .with_rounding(Rounding::TruncateTowardNegInf)
        .with_overflow(Overflow::Saturate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::dequantize;
    use crate::model::{ClassTree, DenseLayer, Tree};

    fn fmt(s: &str) -> FixedPointFormat {
        s.parse().unwrap()
    }

    fn bdt_cfg(threshold: &str, leaf: &str, accum: &str) -> QuantizationConfig {
        QuantizationConfig {
            input_fmt: fmt("fixed<16,4,s>"),
            bdt: Some(BdtFormats {
                threshold_fmt: fmt(threshold),
                leaf_fmt: fmt(leaf),
                accum_fmt: fmt(accum),
            }),
            fcnn: vec![],
            sigmoid: SigmoidTable::default(),
        }
    }

    fn stump_model(threshold: f64, left: f64, right: f64) -> BdtEnsemble {
        BdtEnsemble {
            n_features: 1,
            n_classes: 1,
            trees: vec![ClassTree {
                class_index: 0,
                tree: Tree::stump(0, threshold, left, right),
            }],
            base_scores: vec![0.125],
            objective: Objective::Sigmoid,
        }
    }

    #[test]
    fn exact_parameters_survive() {
        let m = stump_model(0.5, -0.25, 0.75);
        let q = quantize_bdt(
            &m,
            &bdt_cfg("fixed<16,2,s>", "fixed<16,2,s>", "fixed<24,6,s>"),
        )
        .unwrap();
        let f = q.formats();
        match (&q.trees[0].nodes[0], &q.trees[0].nodes[1]) {
            (QNode::Split { threshold, .. }, QNode::Leaf { leaf }) => {
                assert_eq!(dequantize(q.threshold(*threshold)), 0.5);
                assert_eq!(dequantize(q.leaf(*leaf)), -0.25);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            dequantize(FixedPointValue::new(q.base_scores[0], f.leaf_fmt).unwrap()),
            0.125
        );
    }

    #[test]
    fn threshold_rounds_to_nearest() {
        let m = stump_model(0.3, -0.25, 0.75);
        let q = quantize_bdt(
            &m,
            &bdt_cfg("fixed<8,1,s,trn>", "fixed<8,1,s>", "fixed<16,4,s>"),
        )
        .unwrap();
        assert!(matches!(
            q.trees[0].nodes[0],
            QNode::Split { threshold: 38, .. }
        ));
    }

    #[test]
    fn narrow_threshold_format_is_too_small() {
        let m = stump_model(100.0, -0.25, 0.75);
        let err = quantize_bdt(
            &m,
            &bdt_cfg("fixed<2,1,s>", "fixed<8,1,s>", "fixed<16,4,s>"),
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                QuantizeError::WidthTooSmall {
                    required: 8,
                    width: 2,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn accumulator_must_keep_leaf_precision() {
        let m = stump_model(0.5, -0.25, 0.75);
        let err =
            quantize_bdt(&m, &bdt_cfg("fixed<8,1,s>", "fixed<8,1,s>", "fixed<8,4,s>")).unwrap_err();
        assert!(matches!(err, QuantizeError::InvalidConfig(_)));
    }

    fn layer(weights: Vec<Vec<f64>>, act: Activation) -> DenseLayer {
        let n = weights.len();
        DenseLayer {
            weights,
            bias: vec![0.0; n],
            activation: act,
        }
    }

    fn fcnn_cfg(n_layers: usize) -> QuantizationConfig {
        QuantizationConfig {
            input_fmt: fmt("fixed<8,1,s>"),
            bdt: None,
            fcnn: vec![
                LayerFormats {
                    weight_fmt: fmt("fixed<8,1,s>"),
                    bias_fmt: fmt("fixed<8,1,s>"),
                    accum_fmt: fmt("fixed<20,6,s,trn>"),
                    activation_fmt: fmt("fixed<8,1,s,trn>"),
                };
                n_layers
            ],
            sigmoid: SigmoidTable::default(),
        }
    }

    #[test]
    fn fcnn_weights_quantize_and_zeros_stay_zero() {
        let m = FcnnModel {
            layers: vec![layer(
                vec![vec![0.3, 0.0], vec![0.5, -0.75]],
                Activation::Linear,
            )],
        };
        let q = quantize_fcnn(&m, &fcnn_cfg(1), None).unwrap();
        assert_eq!(q.layers[0].weights, vec![vec![38, 0], vec![64, -96]]);
        assert_eq!(q.layers[0].nonzero_count(), 3);
        assert_eq!(q.layers[0].prune_mask, vec![vec![false, false]; 2]);
    }

    #[test]
    fn fcnn_config_checks() {
        let m = FcnnModel {
            layers: vec![layer(vec![vec![0.3]], Activation::Linear)],
        };
        assert!(quantize_fcnn(&m, &fcnn_cfg(2), None).is_err());
        let mut cfg = fcnn_cfg(1);
        // 14 product fractional bits do not fit in 13.
        cfg.fcnn[0].accum_fmt = fmt("fixed<20,7,s>");
        assert!(matches!(
            quantize_fcnn(&m, &cfg, None),
            Err(QuantizeError::InvalidConfig(_))
        ));
        let mut cfg = fcnn_cfg(1);
        cfg.input_fmt = fmt("fixed<60,4,s>");
        assert!(matches!(
            quantize_fcnn(&m, &cfg, None),
            Err(QuantizeError::InvalidConfig(_))
        ));
    }

    #[test]
    fn sigmoid_table_centre_entry() {
        let out = fmt("fixed<8,1,u>");
        let t = SigmoidTable::default();
        let c = t.contents(out);
        assert_eq!(c.len(), 1024);
        // Bin 512 is [0, 1/64) with midpoint 1/128.
        let expected = quantize_real(1.0 / (1.0 + (-1.0f64 / 128.0).exp()), out).raw();
        assert_eq!(c[512], expected);
        assert_eq!(dequantize(FixedPointValue::new(c[512], out).unwrap()), 0.5);
        assert_eq!(t.saturation_values(out), (0, 128));
        assert!(SigmoidTable {
            entries: 1000,
            half_range: 8.0
        }
        .check()
        .is_err());
        assert!(SigmoidTable {
            entries: 64,
            half_range: 3.0
        }
        .check()
        .is_err());
    }

    #[test]
    fn quantized_file_round_trip() {
        let m = stump_model(0.3, -0.25, 0.75);
        let q = QuantizedModel::Bdt(
            quantize_bdt(
                &m,
                &bdt_cfg("fixed<8,1,s>", "fixed<8,1,s>", "fixed<16,4,s>"),
            )
            .unwrap(),
        );
        let bytes = write_quantized(&q, &Model::Bdt(m.clone())).unwrap();
        let (q2, src) = read_quantized(&bytes).unwrap();
        assert_eq!(q2, q);
        assert_eq!(src, Model::Bdt(m));
        let tampered = String::from_utf8(bytes)
            .unwrap()
            .replace("\"threshold\": 38", "\"threshold\": 900");
        assert!(read_quantized(tampered.as_bytes()).is_err());
    }
}
