//! The language-neutral interchange format (schema 1.0).
//!
//! ```json
//! {
//!   "schema_version": "1.0",
//!   "model_kind": "bdt",
//!   "payload": { "n_features": 2, "n_classes": 1, "base_scores": [0.0],
//!                "objective": "sigmoid",
//!                "trees": [{ "class_index": 0,
//!                            "nodes": [{"feature": 0, "threshold": 0.5, "left": 1, "right": 2},
//!                                      {"leaf": -1.0}, {"leaf": 1.0}] }] },
//!   "metadata": { "source_framework": "sklearn", "created": "2024-01-01T00:00:00Z" }
//! }
//! ```
//!
//! An `fcnn` payload is `{"layers": [{"weights": [[..]], "bias": [..],
//! "activation": "relu"}]}`. Writers emit sorted keys and shortest
//! round-trip floats, so equal models serialize to equal bytes.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    Activation, BdtEnsemble, ClassTree, DenseLayer, FcnnModel, Model, Node, Objective, Tree,
    Violation,
};

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("unknown schema version `{0}`")]
    UnknownSchemaVersion(String),
    #[error("structural violation: {}", join(.0))]
    StructuralViolation(Vec<Violation>),
    #[error("tree {tree} has depth {depth}, above the cap of {cap}")]
    DepthCapExceeded {
        tree: usize,
        depth: usize,
        cap: usize,
    },
    #[error("model has no trees or layers")]
    EmptyModel,
}

impl IngestError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::MalformedJson(_) => "MalformedJson",
            IngestError::UnknownSchemaVersion(_) => "UnknownSchemaVersion",
            IngestError::StructuralViolation(_) => "StructuralViolation",
            IngestError::DepthCapExceeded { .. } => "DepthCapExceeded",
            IngestError::EmptyModel => "EmptyModel",
        }
    }
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub source_framework: String,
    pub created: String,
}

impl Default for Metadata {
    fn default() -> Self {
        Self {
            source_framework: "fxhls".into(),
            created: "1970-01-01T00:00:00Z".into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BdtPayload {
    n_features: usize,
    n_classes: usize,
    base_scores: Vec<f64>,
    objective: Objective,
    trees: Vec<TreePayload>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreePayload {
    class_index: usize,
    nodes: Vec<NodePayload>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum NodePayload {
    Leaf {
        leaf: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FcnnPayload {
    layers: Vec<LayerPayload>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerPayload {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

impl From<BdtPayload> for BdtEnsemble {
    fn from(p: BdtPayload) -> Self {
        let trees = p
            .trees
            .into_iter()
            .map(|t| ClassTree {
                class_index: t.class_index,
                tree: Tree {
                    nodes: t
                        .nodes
                        .into_iter()
                        .map(|n| match n {
                            NodePayload::Leaf { leaf } => Node::Leaf { score: leaf },
                            NodePayload::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            } => Node::Internal {
                                feature,
                                threshold,
                                left,
                                right,
                            },
                        })
                        .collect(),
                },
            })
            .collect();
        BdtEnsemble {
            n_features: p.n_features,
            n_classes: p.n_classes,
            trees,
            base_scores: p.base_scores,
            objective: p.objective,
        }
    }
}

impl From<&BdtEnsemble> for BdtPayload {
    fn from(m: &BdtEnsemble) -> Self {
        BdtPayload {
            n_features: m.n_features,
            n_classes: m.n_classes,
            base_scores: m.base_scores.clone(),
            objective: m.objective,
            trees: m
                .trees
                .iter()
                .map(|t| TreePayload {
                    class_index: t.class_index,
                    nodes: t
                        .tree
                        .nodes
                        .iter()
                        .map(|n| match *n {
                            Node::Leaf { score } => NodePayload::Leaf { leaf: score },
                            Node::Internal {
                                feature,
                                threshold,
                                left,
                                right,
                            } => NodePayload::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            },
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

fn malformed(e: impl ToString) -> IngestError {
    IngestError::MalformedJson(e.to_string())
}

fn check(model: Model) -> Result<Model, IngestError> {
    if model.is_empty() {
        return Err(IngestError::EmptyModel);
    }
    let violations = model.validate();
    if violations.is_empty() {
        return Ok(model);
    }
    let (depth, other): (Vec<_>, Vec<_>) = violations
        .into_iter()
        .partition(|v| matches!(v, Violation::DepthExceeded { .. }));
    if !other.is_empty() {
        return Err(IngestError::StructuralViolation(other));
    }
    match depth[0] {
        Violation::DepthExceeded { tree, depth } => Err(IngestError::DepthCapExceeded {
            tree,
            depth,
            cap: crate::model::MAX_TREE_DEPTH,
        }),
        _ => unreachable!(),
    }
}

/// Parses an interchange document and validates the model it carries.
pub fn parse_model(bytes: &[u8]) -> Result<Model, IngestError> {
    parse_document(bytes).map(|(m, _)| m)
}

/// Like [`parse_model`] but also returns the document metadata.
pub fn parse_document(bytes: &[u8]) -> Result<(Model, Metadata), IngestError> {
    let text = std::str::from_utf8(bytes).map_err(malformed)?;
    let mut doc: Value = serde_json::from_str(text).map_err(malformed)?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| malformed("top level must be an object"))?;
    match obj.get("schema_version") {
        Some(Value::String(v)) if v == SCHEMA_VERSION => {}
        Some(Value::String(v)) => return Err(IngestError::UnknownSchemaVersion(v.clone())),
        Some(other) => return Err(IngestError::UnknownSchemaVersion(other.to_string())),
        None => return Err(malformed("missing schema_version")),
    }
    let kind = match obj.get("model_kind") {
        Some(Value::String(k)) => k.clone(),
        _ => return Err(malformed("missing or non-string model_kind")),
    };
    let payload = obj
        .remove("payload")
        .ok_or_else(|| malformed("missing payload"))?;
    let metadata = match obj.remove("metadata") {
        Some(m) => serde_json::from_value(m).map_err(malformed)?,
        None => Metadata::default(),
    };
    if let Some(extra) = obj
        .keys()
        .find(|k| !matches!(k.as_str(), "schema_version" | "model_kind"))
    {
        return Err(malformed(format!("unexpected top-level key `{extra}`")));
    }
    let model = match kind.as_str() {
        "bdt" => {
            let p: BdtPayload = serde_json::from_value(payload).map_err(malformed)?;
            Model::Bdt(p.into())
        }
        "fcnn" => {
            let p: FcnnPayload = serde_json::from_value(payload).map_err(malformed)?;
            Model::Fcnn(FcnnModel {
                layers: p
                    .layers
                    .into_iter()
                    .map(|l| DenseLayer {
                        weights: l.weights,
                        bias: l.bias,
                        activation: l.activation,
                    })
                    .collect(),
            })
        }
        other => {
            return Err(IngestError::StructuralViolation(vec![
                Violation::UnknownModelKind { kind: other.into() },
            ]))
        }
    };
    Ok((check(model)?, metadata))
}

/// Serializes a model with default metadata.
pub fn write_model(m: &Model) -> Result<Vec<u8>, IngestError> {
    write_document(m, &Metadata::default())
}

pub fn write_document(m: &Model, metadata: &Metadata) -> Result<Vec<u8>, IngestError> {
    if m.is_empty() {
        return Err(IngestError::EmptyModel);
    }
    let payload = match m {
        Model::Bdt(b) => serde_json::to_value(BdtPayload::from(b)),
        Model::Fcnn(f) => serde_json::to_value(FcnnPayload {
            layers: f
                .layers
                .iter()
                .map(|l| LayerPayload {
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                    activation: l.activation,
                })
                .collect(),
        }),
    }
    .map_err(malformed)?;
    // serde_json's default map is ordered, so keys come out sorted.
    let doc = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "model_kind": m.kind(),
        "payload": payload,
        "metadata": metadata,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(malformed)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"schema_version":"1.0","model_kind":"bdt",
        "payload":{"n_features":1,"n_classes":1,"base_scores":[0.0],"objective":"sigmoid",
                   "trees":[{"class_index":0,"nodes":[{"leaf":0.7}]}]}}"#;

    #[test]
    fn parses_minimal_bdt() {
        match parse_model(MINIMAL.as_bytes()).unwrap() {
            Model::Bdt(m) => {
                assert_eq!(m.trees.len(), 1);
                assert_eq!(m.trees[0].tree.nodes, vec![Node::Leaf { score: 0.7 }]);
            }
            _ => panic!("expected bdt"),
        }
    }

    #[test]
    fn unknown_kind_and_version() {
        let doc = MINIMAL.replace(r#""model_kind":"bdt""#, r#""model_kind":"tree""#);
        assert!(matches!(
            parse_model(doc.as_bytes()),
            Err(IngestError::StructuralViolation(v)) if matches!(v[0], Violation::UnknownModelKind { .. })
        ));
        let doc = MINIMAL.replace(r#""1.0""#, r#""2.0""#);
        assert!(matches!(
            parse_model(doc.as_bytes()),
            Err(IngestError::UnknownSchemaVersion(v)) if v == "2.0"
        ));
    }

    #[test]
    fn fcnn_bias_mismatch() {
        let doc = r#"{"schema_version":"1.0","model_kind":"fcnn","payload":{"layers":[
            {"weights":[[1,0],[0,1]],"bias":[0],"activation":"linear"}]}}"#;
        match parse_model(doc.as_bytes()) {
            Err(IngestError::StructuralViolation(v)) => {
                assert!(matches!(v[0], Violation::ShapeMismatch { layer: 0, .. }))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        for doc in [
            "not json",
            "[]",
            r#"{"model_kind":"bdt","payload":{}}"#,
            r#"{"schema_version":"1.0","model_kind":"bdt","payload":{"n_features":1}}"#,
            r#"{"schema_version":"1.0","model_kind":"fcnn","payload":{"layers":[
                {"weights":[[1e400]],"bias":[0],"activation":"linear"}]}}"#,
            r#"{"schema_version":"1.0","model_kind":"fcnn","payload":{"layers":[
                {"weights":[[NaN]],"bias":[0],"activation":"linear"}]}}"#,
        ] {
            assert!(
                matches!(
                    parse_model(doc.as_bytes()),
                    Err(IngestError::MalformedJson(_))
                ),
                "{doc}"
            );
        }
    }

    #[test]
    fn empty_models_rejected() {
        let empty = Model::Fcnn(FcnnModel { layers: vec![] });
        assert!(matches!(write_model(&empty), Err(IngestError::EmptyModel)));
        let doc = MINIMAL.replace(r#"[{"class_index":0,"nodes":[{"leaf":0.7}]}]"#, "[]");
        assert!(matches!(
            parse_model(doc.as_bytes()),
            Err(IngestError::EmptyModel)
        ));
    }

    #[test]
    fn write_is_deterministic_and_round_trips() {
        let m = parse_model(MINIMAL.as_bytes()).unwrap();
        let a = write_model(&m).unwrap();
        let b = write_model(&m).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_model(&a).unwrap(), m);
        let text = String::from_utf8(a).unwrap();
        let keys: Vec<usize> = ["metadata", "model_kind", "payload", "schema_version"]
            .iter()
            .map(|k| text.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "keys not sorted");
    }

    #[test]
    fn depth_cap_is_its_own_error() {
        let mut nodes = Vec::new();
        for i in 0..33 {
            nodes.push(format!(
                r#"{{"feature":0,"threshold":0.0,"left":{},"right":{}}}"#,
                2 * i + 1,
                2 * i + 2
            ));
            nodes.push(r#"{"leaf":0.0}"#.to_string());
        }
        nodes.push(r#"{"leaf":1.0}"#.to_string());
        let doc = MINIMAL.replace(r#"[{"leaf":0.7}]"#, &format!("[{}]", nodes.join(",")));
        assert!(matches!(
            parse_model(doc.as_bytes()),
            Err(IngestError::DepthCapExceeded { depth: 33, .. })
        ));
    }
}
