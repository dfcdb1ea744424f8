//! Versioned JSON file format for graphs.
//!
//! The canonical form lists nodes by ascending id with attribute keys in
//! lexicographic order and no insignificant whitespace, so equal graphs
//! serialize to identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{Graph, Node, NodeId, NodeKind, Op, OpKind, PortRef, Tensor, TensorSpec};
use crate::digest::sha256_hex;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GraphFileError {
    #[error("malformed graph file: {0}")]
    Parse(String),
    #[error("unsupported graph schema version {0}")]
    SchemaVersionUnsupported(u32),
    #[error("node {node}: {detail}")]
    Node { node: NodeId, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub kind: String,
    #[serde(default)]
    pub attrs: Map<String, Value>,
    #[serde(default)]
    pub inputs: Vec<(NodeId, usize)>,
    pub outputs: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub schema: u32,
    pub nodes: Vec<NodeRecord>,
    pub inputs: Vec<NodeId>,
    pub outputs: Vec<NodeId>,
}

impl Graph {
    pub fn to_record(&self) -> GraphRecord {
        let nodes = self
            .nodes()
            .map(|n| {
                let attrs = match &n.kind {
                    NodeKind::Op(op) => op.attrs(),
                    NodeKind::Constant(t) => {
                        let mut m = Map::new();
                        m.insert(
                            "value".into(),
                            serde_json::to_value(t).expect("tensors serialize"),
                        );
                        m
                    }
                    NodeKind::Input | NodeKind::Output => Map::new(),
                };
                NodeRecord {
                    id: n.id,
                    kind: n.kind.name().to_string(),
                    attrs,
                    inputs: n.inputs.iter().map(|p| (p.node, p.slot)).collect(),
                    outputs: n.outputs.clone(),
                }
            })
            .collect();
        GraphRecord {
            schema: SCHEMA_VERSION,
            nodes,
            inputs: self.inputs().to_vec(),
            outputs: self.outputs().to_vec(),
        }
    }

    pub fn from_record(rec: GraphRecord) -> Result<Graph, GraphFileError> {
        if rec.schema != SCHEMA_VERSION {
            return Err(GraphFileError::SchemaVersionUnsupported(rec.schema));
        }
        let mut nodes = Vec::with_capacity(rec.nodes.len());
        let mut seen = std::collections::BTreeSet::new();
        for n in rec.nodes {
            let err = |detail: String| GraphFileError::Node { node: n.id, detail };
            if !seen.insert(n.id) {
                return Err(err("duplicate node id".into()));
            }
            let kind = match n.kind.as_str() {
                "Input" => NodeKind::Input,
                "Output" => NodeKind::Output,
                "Constant" => {
                    let v = n
                        .attrs
                        .get("value")
                        .cloned()
                        .ok_or_else(|| err("constant without value".into()))?;
                    let t: Tensor = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
                    NodeKind::Constant(t)
                }
                other => {
                    let kind: OpKind = other.parse().map_err(err)?;
                    NodeKind::Op(Op::from_attrs(kind, &n.attrs).map_err(err)?)
                }
            };
            nodes.push(Node {
                id: n.id,
                kind,
                inputs: n
                    .inputs
                    .into_iter()
                    .map(|(id, slot)| PortRef::new(id, slot))
                    .collect(),
                outputs: n.outputs,
            });
        }
        Ok(Graph::from_parts(nodes, rec.inputs, rec.outputs))
    }

    /// Byte-stable serialization used for hashing and deduplication.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_record()).expect("graph records serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("graph records serialize")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Graph, GraphFileError> {
        let value: Value =
            serde_json::from_slice(bytes).map_err(|e| GraphFileError::Parse(e.to_string()))?;
        if let Some(v) = value.get("schema").and_then(Value::as_u64) {
            if v != u64::from(SCHEMA_VERSION) {
                return Err(GraphFileError::SchemaVersionUnsupported(v as u32));
            }
        }
        let rec: GraphRecord =
            serde_json::from_value(value).map_err(|e| GraphFileError::Parse(e.to_string()))?;
        Graph::from_record(rec)
    }

    pub fn load(path: &Path) -> Result<Graph, GraphFileError> {
        Graph::from_json(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphFileError> {
        std::fs::write(path, self.to_canonical_json())?;
        Ok(())
    }

    /// Short content hash of the canonical serialization.
    pub fn graph_id(&self) -> String {
        sha256_hex(&self.to_canonical_json())[..16].to_string()
    }

    /// Copy with ids reassigned `0..n` in topological order, so graphs that
    /// differ only in id assignment become equal.
    pub fn renumbered(&self) -> Graph {
        let order = self
            .topo_order()
            .unwrap_or_else(|_| self.node_ids().collect());
        let map: BTreeMap<NodeId, NodeId> = order
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, NodeId(i as u32)))
            .collect();
        let remap = |id: NodeId| map.get(&id).copied().unwrap_or(id);
        let nodes = self
            .nodes()
            .map(|n| Node {
                id: remap(n.id),
                kind: n.kind.clone(),
                inputs: n
                    .inputs
                    .iter()
                    .map(|p| PortRef::new(remap(p.node), p.slot))
                    .collect(),
                outputs: n.outputs.clone(),
            })
            .collect();
        Graph::from_parts(
            nodes,
            self.inputs().iter().map(|&i| remap(i)).collect(),
            self.outputs().iter().map(|&o| remap(o)).collect(),
        )
    }
}
