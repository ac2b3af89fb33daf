//! Float-precision model IR for tree ensembles and dense networks.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Trees deeper than this are rejected rather than lowered.
pub const MAX_TREE_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    RawScore,
    Sigmoid,
    Softmax,
}

/// A tree node. Trees are flat arrays rooted at index 0; internal nodes
/// route left iff `x[feature] < threshold`.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        score: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(score: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { score }],
        }
    }

    /// A depth-1 tree: `x[feature] < threshold ? left : right`.
    pub fn stump(feature: usize, threshold: f64, left: f64, right: f64) -> Self {
        Self {
            nodes: vec![
                Node::Internal {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { score: left },
                Node::Leaf { score: right },
            ],
        }
    }

    /// Leaf reached by `x`. Assumes a validated tree.
    pub fn route(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[feature] < threshold { left } else { right },
                Node::Leaf { .. } => return id,
            }
        }
    }

    /// Every leaf with the branch decisions on its root path. Each step is
    /// `(internal node id, went_left)`. Leaves come out in depth-first,
    /// left-before-right order.
    pub fn leaf_paths(&self) -> Vec<(usize, Vec<(usize, bool)>)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((id, path)) = stack.pop() {
            match self.nodes[id] {
                Node::Leaf { .. } => out.push((id, path)),
                Node::Internal { left, right, .. } => {
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

    /// Depth in edges (a single leaf has depth 0). Assumes a validated tree.
    pub fn depth(&self) -> usize {
        self.leaf_paths()
            .iter()
            .map(|(_, p)| p.len())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTree {
    pub class_index: usize,
    pub tree: Tree,
}

/// A boosted ensemble. Binary problems use `n_classes == 1` with a
/// single logit; multiclass models take the argmax over class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct BdtEnsemble {
    pub n_features: usize,
    pub n_classes: usize,
    pub trees: Vec<ClassTree>,
    pub base_scores: Vec<f64>,
    pub objective: Objective,
}

impl BdtEnsemble {
    /// Number of trees attached to each class.
    pub fn trees_per_class(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for t in &self.trees {
            counts[t.class_index] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Softmax,
}

/// `y = act(W x + b)` with `weights` stored row-major as `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn n_out(&self) -> usize {
        self.weights.len()
    }

    pub fn n_in(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnnModel {
    pub layers: Vec<DenseLayer>,
}

impl FcnnModel {
    pub fn n_inputs(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::n_in)
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::n_out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Bdt(BdtEnsemble),
    Fcnn(FcnnModel),
}

impl Model {
    pub fn n_features(&self) -> usize {
        match self {
            Model::Bdt(m) => m.n_features,
            Model::Fcnn(m) => m.n_inputs(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Bdt(_) => "bdt",
            Model::Fcnn(_) => "fcnn",
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Model::Bdt(m) => m.trees.is_empty(),
            Model::Fcnn(m) => m.layers.is_empty(),
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        match self {
            Model::Bdt(m) => validate_bdt(m),
            Model::Fcnn(m) => validate_fcnn(m),
        }
    }
}

/// A broken structural invariant. Violations are data, not errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    NoClasses,
    BaseScoreCount {
        expected: usize,
        found: usize,
    },
    ClassOutOfRange {
        tree: usize,
        class_index: usize,
    },
    EmptyTree {
        tree: usize,
    },
    ChildOutOfRange {
        tree: usize,
        node: usize,
        child: usize,
    },
    CycleViolation {
        tree: usize,
        node: usize,
    },
    SharedChild {
        tree: usize,
        node: usize,
    },
    Unreachable {
        tree: usize,
        node: usize,
    },
    FeatureOutOfRange {
        tree: usize,
        node: usize,
        feature: usize,
    },
    DepthExceeded {
        tree: usize,
        depth: usize,
    },
    NonFiniteValue {
        location: String,
    },
    ShapeMismatch {
        layer: usize,
        detail: String,
    },
    SoftmaxPlacement {
        layer: usize,
    },
    UnknownModelKind {
        kind: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoClasses => write!(f, "n_classes must be at least 1"),
            Violation::BaseScoreCount { expected, found } => {
                write!(f, "expected {expected} base scores, found {found}")
            }
            Violation::ClassOutOfRange { tree, class_index } => {
                write!(f, "tree {tree}: class_index {class_index} out of range")
            }
            Violation::EmptyTree { tree } => write!(f, "tree {tree} has no nodes"),
            Violation::ChildOutOfRange { tree, node, child } => {
                write!(f, "tree {tree} node {node}: child {child} out of range")
            }
            Violation::CycleViolation { tree, node } => {
                write!(f, "tree {tree}: cycle through node {node}")
            }
            Violation::SharedChild { tree, node } => {
                write!(f, "tree {tree}: node {node} has more than one parent")
            }
            Violation::Unreachable { tree, node } => {
                write!(f, "tree {tree}: node {node} unreachable from root")
            }
            Violation::FeatureOutOfRange {
                tree,
                node,
                feature,
            } => write!(f, "tree {tree} node {node}: feature {feature} out of range"),
            Violation::DepthExceeded { tree, depth } => {
                write!(f, "tree {tree}: depth {depth} exceeds {MAX_TREE_DEPTH}")
            }
            Violation::NonFiniteValue { location } => write!(f, "non-finite value at {location}"),
            Violation::ShapeMismatch { layer, detail } => {
                write!(f, "layer {layer}: shape mismatch ({detail})")
            }
            Violation::SoftmaxPlacement { layer } => {
                write!(
                    f,
                    "layer {layer}: softmax is only allowed on the final layer"
                )
            }
            Violation::UnknownModelKind { kind } => write!(f, "unknown model kind `{kind}`"),
        }
    }
}

fn check_tree(tree_idx: usize, tree: &Tree, n_features: usize, out: &mut Vec<Violation>) {
    let n = tree.nodes.len();
    if n == 0 {
        out.push(Violation::EmptyTree { tree: tree_idx });
        return;
    }
    for (id, node) in tree.nodes.iter().enumerate() {
        match *node {
            Node::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                if feature >= n_features {
                    out.push(Violation::FeatureOutOfRange {
                        tree: tree_idx,
                        node: id,
                        feature,
                    });
                }
                if !threshold.is_finite() {
                    out.push(Violation::NonFiniteValue {
                        location: format!("trees[{tree_idx}].nodes[{id}].threshold"),
                    });
                }
                for child in [left, right] {
                    if child >= n {
                        out.push(Violation::ChildOutOfRange {
                            tree: tree_idx,
                            node: id,
                            child,
                        });
                    }
                }
            }
            Node::Leaf { score } => {
                if !score.is_finite() {
                    out.push(Violation::NonFiniteValue {
                        location: format!("trees[{tree_idx}].nodes[{id}].leaf"),
                    });
                }
            }
        }
    }

    // Depth-first walk; a node seen twice is either a cycle (it is still
    // on the current path) or shared between two parents.
    let mut visited = vec![false; n];
    let mut on_path = vec![false; n];
    let mut max_depth = 0;
    let mut stack: Vec<(usize, usize, bool)> = vec![(0, 0, false)];
    while let Some((id, depth, leaving)) = stack.pop() {
        if leaving {
            on_path[id] = false;
            continue;
        }
        visited[id] = true;
        on_path[id] = true;
        max_depth = max_depth.max(depth);
        stack.push((id, depth, true));
        if let Node::Internal { left, right, .. } = tree.nodes[id] {
            if left == right && left < n {
                out.push(Violation::SharedChild {
                    tree: tree_idx,
                    node: left,
                });
            }
            for child in [right, left] {
                if child >= n {
                    continue;
                }
                if on_path[child] {
                    out.push(Violation::CycleViolation {
                        tree: tree_idx,
                        node: child,
                    });
                } else if visited[child] {
                    if left != right {
                        out.push(Violation::SharedChild {
                            tree: tree_idx,
                            node: child,
                        });
                    }
                } else {
                    stack.push((child, depth + 1, false));
                }
            }
        }
    }
    for (id, seen) in visited.iter().enumerate() {
        if !seen {
            out.push(Violation::Unreachable {
                tree: tree_idx,
                node: id,
            });
        }
    }
    if max_depth > MAX_TREE_DEPTH {
        out.push(Violation::DepthExceeded {
            tree: tree_idx,
            depth: max_depth,
        });
    }
}

/// Lists every broken invariant of a tree ensemble.
pub fn validate_bdt(m: &BdtEnsemble) -> Vec<Violation> {
    let mut out = Vec::new();
    if m.n_classes == 0 {
        out.push(Violation::NoClasses);
    }
    if m.base_scores.len() != m.n_classes {
        out.push(Violation::BaseScoreCount {
            expected: m.n_classes,
            found: m.base_scores.len(),
        });
    }
    for (i, b) in m.base_scores.iter().enumerate() {
        if !b.is_finite() {
            out.push(Violation::NonFiniteValue {
                location: format!("base_scores[{i}]"),
            });
        }
    }
    for (i, ct) in m.trees.iter().enumerate() {
        if ct.class_index >= m.n_classes {
            out.push(Violation::ClassOutOfRange {
                tree: i,
                class_index: ct.class_index,
            });
        }
        check_tree(i, &ct.tree, m.n_features, &mut out);
    }
    out
}

/// Lists every broken invariant of a dense network.
pub fn validate_fcnn(m: &FcnnModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let last = m.layers.len().saturating_sub(1);
    let mut prev_out: Option<usize> = None;
    for (k, layer) in m.layers.iter().enumerate() {
        let n_in = layer.n_in();
        if layer.weights.is_empty() || n_in == 0 {
            out.push(Violation::ShapeMismatch {
                layer: k,
                detail: "layer has no weights".into(),
            });
        }
        if let Some(r) = layer.weights.iter().position(|row| row.len() != n_in) {
            out.push(Violation::ShapeMismatch {
                layer: k,
                detail: format!(
                    "row {r} has {} columns, expected {n_in}",
                    layer.weights[r].len()
                ),
            });
        }
        if layer.bias.len() != layer.n_out() {
            out.push(Violation::ShapeMismatch {
                layer: k,
                detail: format!(
                    "bias length {} != {} outputs",
                    layer.bias.len(),
                    layer.n_out()
                ),
            });
        }
        if let Some(p) = prev_out {
            if p != n_in {
                out.push(Violation::ShapeMismatch {
                    layer: k,
                    detail: format!("expects {n_in} inputs, previous layer gives {p}"),
                });
            }
        }
        if layer.activation == Activation::Softmax && k != last {
            out.push(Violation::SoftmaxPlacement { layer: k });
        }
        for (r, row) in layer.weights.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                if !w.is_finite() {
                    out.push(Violation::NonFiniteValue {
                        location: format!("layers[{k}].weights[{r}][{c}]"),
                    });
                }
            }
        }
        for (r, b) in layer.bias.iter().enumerate() {
            if !b.is_finite() {
                out.push(Violation::NonFiniteValue {
                    location: format!("layers[{k}].bias[{r}]"),
                });
            }
        }
        prev_out = Some(layer.n_out());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelStats {
    pub n_params: usize,
    pub n_nodes: usize,
    pub max_depth: usize,
    pub n_nonzero_weights: usize,
}

/// Parameter and size counts.
///
/// For ensembles `n_nodes` counts tree nodes and `max_depth` is the deepest
/// tree; parameters are thresholds, leaf scores and base scores. For
/// networks `n_nodes` counts neurons, `max_depth` counts layers and
/// parameters are `sum(out * in + out)`.
pub fn model_stats(m: &Model) -> ModelStats {
    match m {
        Model::Bdt(b) => {
            let n_nodes = b.trees.iter().map(|t| t.tree.nodes.len()).sum();
            ModelStats {
                n_params: n_nodes + b.base_scores.len(),
                n_nodes,
                max_depth: b.trees.iter().map(|t| t.tree.depth()).max().unwrap_or(0),
                n_nonzero_weights: 0,
            }
        }
        Model::Fcnn(f) => ModelStats {
            n_params: f
                .layers
                .iter()
                .map(|l| l.n_out() * l.n_in() + l.bias.len())
                .sum(),
            n_nodes: f.layers.iter().map(DenseLayer::n_out).sum(),
            max_depth: f.layers.len(),
            n_nonzero_weights: f
                .layers
                .iter()
                .flat_map(|l| l.weights.iter().flatten())
                .filter(|w| **w != 0.0)
                .count(),
        },
    }
}
