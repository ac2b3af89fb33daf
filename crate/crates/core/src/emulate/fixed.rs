use crate::fixedpoint::{
    cast, fxp_compare, fxp_mul, quantize_real, FixedPointFormat, FixedPointValue,
};
use crate::model::Activation;
use crate::quantize::{
    product_format, QNode, QuantizedBdt, QuantizedFcnn, QuantizedModel, SigmoidTable,
};

use super::reduce::{reduce, AccumulationOrder};

/// Where an accumulator value falls relative to the sigmoid table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LutIndex {
    Below,
    Entry(usize),
    Above,
}

/// Table bin of `raw * 2^-frac`: `floor(v / step) + entries / 2`.
pub fn sigmoid_index(raw: i128, frac: u32, table: &SigmoidTable) -> LutIndex {
    let e = table.entries_log2() as i64;
    let r = table.half_range_log2() as i64;
    let sh = e - r - 1 - frac as i64;
    let scaled = if sh >= 0 {
        raw << sh
    } else {
        raw >> (-sh).min(127)
    };
    let idx = scaled + (1i128 << (e - 1));
    if idx < 0 {
        LutIndex::Below
    } else if idx >= table.entries as i128 {
        LutIndex::Above
    } else {
        LutIndex::Entry(idx as usize)
    }
}

/// Sigmoid lookup for one activation format.
#[derive(Debug, Clone)]
pub struct SigmoidLut {
    pub table: SigmoidTable,
    pub contents: Vec<i128>,
    pub below: i128,
    pub above: i128,
    pub out: FixedPointFormat,
}

impl SigmoidLut {
    pub fn new(table: SigmoidTable, out: FixedPointFormat) -> Self {
        let (below, above) = table.saturation_values(out);
        Self {
            table,
            contents: table.contents(out),
            below,
            above,
            out,
        }
    }

    pub fn lookup(&self, v: FixedPointValue) -> FixedPointValue {
        let raw = match sigmoid_index(v.raw(), v.format().fractional_bits(), &self.table) {
            LutIndex::Below => self.below,
            LutIndex::Entry(i) => self.contents[i],
            LutIndex::Above => self.above,
        };
        FixedPointValue::new(raw, self.out).expect("table entries fit the output format")
    }
}

/// Applies a quantized layer activation to an accumulator value.
pub fn activate(
    act: Activation,
    acc: FixedPointValue,
    out: FixedPointFormat,
    lut: Option<&SigmoidLut>,
) -> FixedPointValue {
    match act {
        Activation::Linear | Activation::Softmax => cast(acc, out),
        Activation::Relu => {
            let v = if acc.is_negative() {
                FixedPointValue::zero(acc.format())
            } else {
                acc
            };
            cast(v, out)
        }
        Activation::Sigmoid => lut.expect("sigmoid layer has a table").lookup(acc),
    }
}

pub fn quantize_input(x: &[f64], fmt: FixedPointFormat) -> Vec<FixedPointValue> {
    x.iter().map(|v| quantize_real(*v, fmt)).collect()
}

/// Bit-exact reference engine for a quantized model.
#[derive(Debug, Clone)]
pub struct FixedEngine {
    model: QuantizedModel,
    order: AccumulationOrder,
    products: Vec<FixedPointFormat>,
    luts: Vec<Option<SigmoidLut>>,
}

impl FixedEngine {
    pub fn new(model: &QuantizedModel, order: AccumulationOrder) -> Self {
        let (products, luts) = match model {
            QuantizedModel::Bdt(_) => (Vec::new(), Vec::new()),
            QuantizedModel::Fcnn(q) => {
                let products = (0..q.layers.len())
                    .map(|k| {
                        product_format(q.layer_input_fmt(k), q.config.fcnn[k].weight_fmt)
                            .expect("checked at quantization")
                    })
                    .collect();
                let luts = q
                    .layers
                    .iter()
                    .zip(&q.config.fcnn)
                    .map(|(l, f)| {
                        (l.activation == Activation::Sigmoid)
                            .then(|| SigmoidLut::new(q.config.sigmoid, f.activation_fmt))
                    })
                    .collect();
                (products, luts)
            }
        };
        Self {
            model: model.clone(),
            order,
            products,
            luts,
        }
    }

    pub fn model(&self) -> &QuantizedModel {
        &self.model
    }

    pub fn input_format(&self) -> FixedPointFormat {
        self.model.config().input_fmt
    }

    /// Output scores for a real-valued input, quantized with the input format.
    pub fn run(&self, x: &[f64]) -> Vec<FixedPointValue> {
        self.run_quantized(&quantize_input(x, self.input_format()))
    }

    /// Output scores for an input already in the input format.
    pub fn run_quantized(&self, x: &[FixedPointValue]) -> Vec<FixedPointValue> {
        match &self.model {
            QuantizedModel::Bdt(q) => bdt_scores(q, x, self.order),
            QuantizedModel::Fcnn(q) => self.fcnn_outputs(q, x),
        }
    }

    fn fcnn_outputs(&self, q: &QuantizedFcnn, x: &[FixedPointValue]) -> Vec<FixedPointValue> {
        let mut h = x.to_vec();
        for (k, layer) in q.layers.iter().enumerate() {
            let f = q.config.fcnn[k];
            h = (0..layer.n_out())
                .map(|n| {
                    let mut ops: Vec<FixedPointValue> = layer
                        .nonzero_inputs(n)
                        .into_iter()
                        .map(|i| {
                            let w = FixedPointValue::new(layer.weights[n][i], f.weight_fmt)
                                .expect("weight fits");
                            fxp_mul(h[i], w, self.products[k])
                        })
                        .collect();
                    ops.push(FixedPointValue::new(layer.bias[n], f.bias_fmt).expect("bias fits"));
                    let acc = reduce(&ops, f.accum_fmt, self.order);
                    activate(
                        layer.activation,
                        acc,
                        f.activation_fmt,
                        self.luts[k].as_ref(),
                    )
                })
                .collect();
        }
        h
    }
}

/// Leaf reached by `x` in a quantized tree.
pub fn route(tree: &crate::quantize::QTree, q: &QuantizedBdt, x: &[FixedPointValue]) -> usize {
    let mut id = 0;
    loop {
        match tree.nodes[id] {
            QNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let goes_left = fxp_compare(x[feature], q.threshold(threshold)).is_lt();
                id = if goes_left { left } else { right };
            }
            QNode::Leaf { .. } => return id,
        }
    }
}

pub fn bdt_scores(
    q: &QuantizedBdt,
    x: &[FixedPointValue],
    order: AccumulationOrder,
) -> Vec<FixedPointValue> {
    let f = q.formats();
    let mut ops: Vec<Vec<FixedPointValue>> = vec![Vec::new(); q.n_classes];
    for tree in &q.trees {
        let leaf = route(tree, q, x);
        if let QNode::Leaf { leaf } = tree.nodes[leaf] {
            ops[tree.class_index].push(q.leaf(leaf));
        }
    }
    ops.into_iter()
        .zip(&q.base_scores)
        .map(|(mut class_ops, base)| {
            class_ops.push(q.leaf(*base));
            reduce(&class_ops, f.accum_fmt, order)
        })
        .collect()
}
