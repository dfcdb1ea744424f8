use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    Unsupported,
    OutOfBounds,
    ShapeMismatch,
    NumericFault,
}

impl ErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Unsupported => "Unsupported",
            ErrorKind::OutOfBounds => "OutOfBounds",
            ErrorKind::ShapeMismatch => "ShapeMismatch",
            ErrorKind::NumericFault => "NumericFault",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeError {
    pub kind: ErrorKind,
    pub detail: String,
}

impl NodeError {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        NodeError {
            kind,
            detail: detail.into(),
        }
    }

    pub fn unsupported(detail: impl Into<String>) -> Self {
        NodeError::new(ErrorKind::Unsupported, detail)
    }

    pub fn out_of_bounds(detail: impl Into<String>) -> Self {
        NodeError::new(ErrorKind::OutOfBounds, detail)
    }

    pub fn shape(detail: impl Into<String>) -> Self {
        NodeError::new(ErrorKind::ShapeMismatch, detail)
    }

    pub fn numeric(detail: impl Into<String>) -> Self {
        NodeError::new(ErrorKind::NumericFault, detail)
    }
}

impl fmt::Display for NodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeOutcome {
    Ok(Tensor),
    Failed(NodeError),
    /// Not run because the producer `cause` (or one of its ancestors) failed.
    Skipped {
        cause: NodeId,
    },
}

impl NodeOutcome {
    pub fn tensor(&self) -> Option<&Tensor> {
        match self {
            NodeOutcome::Ok(t) => Some(t),
            _ => None,
        }
    }

    pub fn error(&self) -> Option<&NodeError> {
        match self {
            NodeOutcome::Failed(e) => Some(e),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            NodeOutcome::Ok(_) => "Ok".into(),
            NodeOutcome::Failed(e) => e.kind.to_string(),
            NodeOutcome::Skipped { .. } => "Skipped".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node: NodeId,
    pub outcome: NodeOutcome,
    pub micros: u64,
}

/// Why a compiled run never reached execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompileFailure {
    /// The pipeline hit its iteration cap; `cycle` lists the passes whose
    /// effects repeat at the end of the log.
    Stalled {
        iterations: usize,
        cycle: Vec<String>,
    },
    Unsupported {
        node: NodeId,
        detail: String,
    },
    /// A pass produced a graph that no longer validates.
    CompilerBug {
        pass: String,
        detail: String,
    },
}

impl CompileFailure {
    pub fn label(&self) -> &'static str {
        match self {
            CompileFailure::Stalled { .. } => "Stalled Compilation",
            CompileFailure::Unsupported { .. } => "Unsupported Ops",
            CompileFailure::CompilerBug { .. } => "Compiler Bug",
        }
    }
}

impl fmt::Display for CompileFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompileFailure::Stalled { iterations, cycle } => {
                write!(
                    f,
                    "stalled after {iterations} iterations, cycle {}",
                    cycle.join(" -> ")
                )
            }
            CompileFailure::Unsupported { node, detail } => {
                write!(f, "cannot compile {node}: {detail}")
            }
            CompileFailure::CompilerBug { pass, detail } => {
                write!(f, "pass {pass} broke the graph: {detail}")
            }
        }
    }
}

impl std::error::Error for CompileFailure {}

/// Everything one backend run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub backend: String,
    pub mode: String,
    pub graph_id: String,
    pub inputs_id: String,
    /// Node outcomes in topological order of the executed graph.
    pub records: Vec<NodeRecord>,
    /// Graph output node ids, in graph order.
    pub outputs: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compile_failure: Option<CompileFailure>,
    /// For compiled runs: executed node id to the original node id it stands
    /// for. Absent for eager runs, where ids are the original ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_map: Option<BTreeMap<NodeId, NodeId>>,
}

impl ExecutionTrace {
    pub fn outcome(&self, node: NodeId) -> Option<&NodeOutcome> {
        self.records
            .iter()
            .find(|r| r.node == node)
            .map(|r| &r.outcome)
    }

    /// Outcomes keyed by original node id.
    pub fn by_original_id(&self) -> BTreeMap<NodeId, &NodeOutcome> {
        self.records
            .iter()
            .filter_map(|r| {
                let id = match &self.node_map {
                    Some(m) => *m.get(&r.node)?,
                    None => r.node,
                };
                Some((id, &r.outcome))
            })
            .collect()
    }

    pub fn output_outcomes(&self) -> Vec<(NodeId, Option<&NodeOutcome>)> {
        self.outputs.iter().map(|&o| (o, self.outcome(o))).collect()
    }

    /// Failed nodes with their error, in execution order.
    pub fn failures(&self) -> impl Iterator<Item = (NodeId, &NodeError)> {
        self.records
            .iter()
            .filter_map(|r| r.outcome.error().map(|e| (r.node, e)))
    }

    /// Content digest of the run, independent of timings.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.backend, &self.mode, &self.graph_id, &self.inputs_id] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        if let Some(f) = &self.compile_failure {
            h.update(serde_json::to_vec(f).expect("failures serialize"));
        }
        for r in &self.records {
            h.update(u64::from(r.node.0).to_le_bytes());
            match &r.outcome {
                NodeOutcome::Ok(t) => {
                    h.update([0u8]);
                    h.update(serde_json::to_vec(t.spec()).expect("specs serialize"));
                    h.update(t.data().to_le_bytes());
                }
                NodeOutcome::Failed(e) => {
                    h.update([1u8]);
                    h.update(e.kind.name().as_bytes());
                    h.update(e.detail.as_bytes());
                }
                NodeOutcome::Skipped { cause } => {
                    h.update([2u8]);
                    h.update(u64::from(cause.0).to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    pub fn total_micros(&self) -> u64 {
        self.records.iter().map(|r| r.micros).sum()
    }
}
