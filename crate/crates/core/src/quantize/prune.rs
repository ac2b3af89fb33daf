use serde::{Deserialize, Serialize};

use super::QuantizeError;
use crate::model::FcnnModel;

/// Fraction of weights to remove from each layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningConfig {
    pub sparsity: Vec<f64>,
}

impl PruningConfig {
    pub fn uniform(sparsity: f64, n_layers: usize) -> Self {
        Self {
            sparsity: vec![sparsity; n_layers],
        }
    }
}

/// Positions zeroed by pruning, shaped like the layer's weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub pruned: Vec<Vec<bool>>,
}

impl PruneMask {
    pub fn count(&self) -> usize {
        self.pruned.iter().flatten().filter(|p| **p).count()
    }
}

/// One-shot magnitude pruning.
///
/// Each layer loses exactly `floor(sparsity * n_weights)` weights, the
/// smallest by magnitude with ties going to the earlier `(row, col)`.
/// Biases are never pruned.
pub fn prune_fcnn(
    m: &FcnnModel,
    p: &PruningConfig,
) -> Result<(FcnnModel, Vec<PruneMask>), QuantizeError> {
    if p.sparsity.len() != m.layers.len() {
        return Err(QuantizeError::InvalidConfig(format!(
            "{} sparsity values for {} layers",
            p.sparsity.len(),
            m.layers.len()
        )));
    }
    if let Some(s) = p.sparsity.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(QuantizeError::InvalidConfig(format!(
            "sparsity {s} outside [0, 1]"
        )));
    }
    let mut out = m.clone();
    let mut masks = Vec::with_capacity(m.layers.len());
    for (layer, &sparsity) in out.layers.iter_mut().zip(&p.sparsity) {
        let n_in = layer.n_in();
        let mut order: Vec<(usize, usize)> = (0..layer.n_out())
            .flat_map(|r| (0..n_in).map(move |c| (r, c)))
            .collect();
        let n_prune = (sparsity * order.len() as f64).floor() as usize;
        order.sort_by(|&(r1, c1), &(r2, c2)| {
            let a = layer.weights[r1][c1].abs();
            let b = layer.weights[r2][c2].abs();
            a.total_cmp(&b).then((r1, c1).cmp(&(r2, c2)))
        });
        let mut pruned = vec![vec![false; n_in]; layer.n_out()];
        for &(r, c) in &order[..n_prune] {
            layer.weights[r][c] = 0.0;
            pruned[r][c] = true;
        }
        masks.push(PruneMask { pruned });
    }
    Ok((out, masks))
}
