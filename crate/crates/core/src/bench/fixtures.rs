//! Model generators for tests, benchmarks and the sweep examples.

use rand::Rng;

use crate::dataset::Dataset;
use crate::model::{
    Activation, BdtEnsemble, ClassTree, DenseLayer, FcnnModel, Node, Objective, Tree,
};

fn random_tree<R: Rng>(rng: &mut R, n_features: usize, max_depth: usize) -> Tree {
    fn grow<R: Rng>(
        rng: &mut R,
        nodes: &mut Vec<Node>,
        n_features: usize,
        depth: usize,
        max_depth: usize,
    ) -> usize {
        let id = nodes.len();
        let split = depth < max_depth && (depth == 0 || rng.random_bool(0.7));
        if !split {
            nodes.push(Node::Leaf {
                score: rng.random_range(-1.0..1.0),
            });
            return id;
        }
        nodes.push(Node::Leaf { score: 0.0 });
        let feature = rng.random_range(0..n_features);
        let threshold = rng.random_range(-2.0..2.0);
        let left = grow(rng, nodes, n_features, depth + 1, max_depth);
        let right = grow(rng, nodes, n_features, depth + 1, max_depth);
        nodes[id] = Node::Internal {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
    let mut nodes = Vec::new();
    grow(rng, &mut nodes, n_features, 0, max_depth);
    Tree { nodes }
}

/// Random ensemble with `n_trees` trees assigned to classes round-robin.
/// A single class uses the sigmoid objective, several use softmax.
pub fn random_bdt<R: Rng>(
    rng: &mut R,
    n_features: usize,
    n_classes: usize,
    n_trees: usize,
    max_depth: usize,
) -> BdtEnsemble {
    let trees = (0..n_trees)
        .map(|i| ClassTree {
            class_index: i % n_classes,
            tree: random_tree(rng, n_features, max_depth),
        })
        .collect();
    BdtEnsemble {
        n_features,
        n_classes,
        trees,
        base_scores: (0..n_classes)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect(),
        objective: if n_classes == 1 {
            Objective::Sigmoid
        } else {
            Objective::Softmax
        },
    }
}

/// Random dense network with layer widths `sizes` (inputs first). About
/// a fifth of the weights are exactly zero. Hidden activations are drawn
/// from ReLU, sigmoid and linear; the last layer is linear or sigmoid.
pub fn random_fcnn<R: Rng>(rng: &mut R, sizes: &[usize]) -> FcnnModel {
    let n_layers = sizes.len().saturating_sub(1);
    let layers = (0..n_layers)
        .map(|k| {
            let (n_in, n_out) = (sizes[k], sizes[k + 1]);
            let weights = (0..n_out)
                .map(|_| {
                    (0..n_in)
                        .map(|_| {
                            if rng.random_bool(0.2) {
                                0.0
                            } else {
                                rng.random_range(-1.0..1.0)
                            }
                        })
                        .collect()
                })
                .collect();
            let activation = if k + 1 == n_layers {
                [Activation::Linear, Activation::Sigmoid][rng.random_range(0..2)]
            } else {
                [Activation::Relu, Activation::Sigmoid, Activation::Linear][rng.random_range(0..3)]
            };
            DenseLayer {
                weights,
                bias: (0..n_out).map(|_| rng.random_range(-0.5..0.5)).collect(),
                activation,
            }
        })
        .collect();
    FcnnModel { layers }
}

/// Per-class feature means of a labelled dataset.
pub fn class_means(data: &Dataset, n_classes: usize) -> Vec<Vec<f64>> {
    let d = data.n_features();
    let mut sums = vec![vec![0.0; d]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (x, &l) in data.features.iter().zip(&data.labels) {
        if l < n_classes {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= n.max(1) as f64;
        }
    }
    sums
}

fn n_classes(data: &Dataset) -> usize {
    data.labels.iter().max().map_or(0, |m| m + 1).max(2)
}

/// Nearest-class-mean classifier as a two-layer ReLU network. The hidden
/// layer splits each input into positive and negative parts; logit `c`
/// is `mu_c . x - |mu_c|^2 / 2`.
pub fn blob_fcnn(data: &Dataset) -> FcnnModel {
    let k = n_classes(data);
    let means = class_means(data, k);
    let d = data.n_features();
    let hidden = (0..2 * d)
        .map(|r| {
            (0..d)
                .map(|c| match (r < d, r % d == c) {
                    (true, true) => 1.0,
                    (false, true) => -1.0,
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let out = means
        .iter()
        .map(|m| m.iter().copied().chain(m.iter().map(|v| -v)).collect())
        .collect();
    FcnnModel {
        layers: vec![
            DenseLayer {
                weights: hidden,
                bias: vec![0.0; 2 * d],
                activation: Activation::Relu,
            },
            DenseLayer {
                weights: out,
                bias: means
                    .iter()
                    .map(|m| -m.iter().map(|v| v * v).sum::<f64>() / 2.0)
                    .collect(),
                activation: Activation::Linear,
            },
        ],
    }
}

/// Thresholds of the staircase used by [`blob_bdt`].
fn stair(steps: usize) -> Vec<f64> {
    let half = (steps as f64 - 1.0) / 2.0;
    (0..steps).map(|k| (k as f64 - half) * 0.5).collect()
}

/// Nearest-class-mean classifier as an ensemble of stumps. Each linear
/// term `a * x_j` is approximated by `steps` stumps half a unit apart.
/// Two classes give a single sigmoid score (class 1 minus class 0).
pub fn blob_bdt(data: &Dataset, steps: usize) -> BdtEnsemble {
    let k = n_classes(data);
    let means = class_means(data, k);
    let d = data.n_features();
    let bias = |m: &[f64]| -m.iter().map(|v| v * v).sum::<f64>() / 2.0;
    let (coef, base): (Vec<Vec<f64>>, Vec<f64>) = if k == 2 {
        let a = (0..d).map(|j| means[1][j] - means[0][j]).collect();
        (vec![a], vec![bias(&means[1]) - bias(&means[0])])
    } else {
        (means.clone(), means.iter().map(|m| bias(m)).collect())
    };
    let mut trees = Vec::new();
    for (c, a) in coef.iter().enumerate() {
        for (j, &aj) in a.iter().enumerate() {
            for t in stair(steps) {
                let step = aj * 0.25;
                trees.push(ClassTree {
                    class_index: c,
                    tree: Tree::stump(j, t, -step, step),
                });
            }
        }
    }
    BdtEnsemble {
        n_features: d,
        n_classes: coef.len(),
        trees,
        base_scores: base,
        objective: if k == 2 {
            Objective::Sigmoid
        } else {
            Objective::Softmax
        },
    }
}
