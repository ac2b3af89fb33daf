use crate::model::{Activation, BdtEnsemble, FcnnModel, Model};

/// Per-class raw scores: base score plus the routed leaf of every tree.
pub fn bdt_scores(m: &BdtEnsemble, x: &[f64]) -> Vec<f64> {
    let mut scores = m.base_scores.clone();
    for ct in &m.trees {
        let leaf = ct.tree.route(x);
        if let crate::model::Node::Leaf { score } = ct.tree.nodes[leaf] {
            scores[ct.class_index] += score;
        }
    }
    scores
}

/// Elementwise activation. Softmax is left as logits, which keeps the
/// argmax and matches the fixed-point datapath.
pub fn activate(act: Activation, v: f64) -> f64 {
    match act {
        Activation::Linear | Activation::Softmax => v,
        Activation::Relu => v.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
    }
}

/// Pre-activation values of one layer.
pub fn dense(m: &crate::model::DenseLayer, x: &[f64]) -> Vec<f64> {
    m.weights
        .iter()
        .zip(&m.bias)
        .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
        .collect()
}

pub fn fcnn_outputs(m: &FcnnModel, x: &[f64]) -> Vec<f64> {
    m.layers.iter().fold(x.to_vec(), |h, layer| {
        dense(layer, &h)
            .into_iter()
            .map(|v| activate(layer.activation, v))
            .collect()
    })
}

pub fn scores(m: &Model, x: &[f64]) -> Vec<f64> {
    match m {
        Model::Bdt(b) => bdt_scores(b, x),
        Model::Fcnn(f) => fcnn_outputs(f, x),
    }
}
