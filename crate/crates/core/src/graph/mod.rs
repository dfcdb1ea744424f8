//! Computation-graph data model.
//!
//! A [`Graph`] is a DAG of [`Node`]s keyed by [`NodeId`]. Graph inputs and
//! outputs are themselves nodes (`Input` and `Output`), and constants are
//! nodes too so optimization passes have one uniform rewrite target.

mod builder;
mod dtype;
pub mod fixtures;
mod json;
mod ops;
mod tensor;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builder::GraphBuilder;
pub use dtype::DType;
pub use json::{GraphFileError, GraphRecord, NodeRecord, SCHEMA_VERSION};
pub use ops::{infer_op, BagMode, InferredSpec, Op, OpCheckError, OpGroup, OpKind};
pub use tensor::{
    row_major_strides, Buffer, SpecError, Tensor, TensorSpec, DEFAULT_ELEMENT_CAP, MAX_EXTENT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// One output slot of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortRef {
    pub node: NodeId,
    pub slot: usize,
}

impl PortRef {
    pub fn new(node: NodeId, slot: usize) -> Self {
        PortRef { node, slot }
    }
}

impl From<NodeId> for PortRef {
    fn from(node: NodeId) -> Self {
        PortRef { node, slot: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Input,
    Output,
    Constant(Tensor),
    Op(Op),
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Input => "Input",
            NodeKind::Output => "Output",
            NodeKind::Constant(_) => "Constant",
            NodeKind::Op(op) => op.kind().name(),
        }
    }

    pub fn op(&self) -> Option<&Op> {
        match self {
            NodeKind::Op(op) => Some(op),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub inputs: Vec<PortRef>,
    pub outputs: Vec<TensorSpec>,
}

impl Node {
    pub fn op(&self) -> Option<&Op> {
        self.kind.op()
    }

    pub fn op_kind(&self) -> Option<OpKind> {
        self.op().map(Op::kind)
    }

    pub fn is_op(&self) -> bool {
        matches!(self.kind, NodeKind::Op(_))
    }

    /// Output spec of slot 0; every node kind except `Output` has exactly one.
    pub fn spec(&self) -> &TensorSpec {
        &self.outputs[0]
    }

    /// Input slot whose storage the output aliases, for in-place operators.
    pub fn aliased_input(&self) -> Option<usize> {
        (self.op_kind() == Some(OpKind::AddInPlace)).then_some(0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("cycle through node {node}")]
    CycleDetected { node: NodeId },
    #[error("node {node}: dangling edge: {detail}")]
    DanglingEdge { node: NodeId, detail: String },
    #[error("node {node}: signature mismatch: {detail}")]
    SignatureMismatch { node: NodeId, detail: String },
    #[error("node {node}: graph boundary: {detail}")]
    Boundary { node: NodeId, detail: String },
    #[error("input node {node} does not reach any output")]
    UnreachableInput { node: NodeId },
}

impl GraphError {
    pub fn node(&self) -> NodeId {
        match self {
            GraphError::CycleDetected { node }
            | GraphError::DanglingEdge { node, .. }
            | GraphError::SignatureMismatch { node, .. }
            | GraphError::Boundary { node, .. }
            | GraphError::UnreachableInput { node } => *node,
        }
    }
}

/// Static analog of a runtime shape mismatch.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("node {node}: expected {expected}, got {actual}")]
pub struct ShapeError {
    pub node: NodeId,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferError {
    #[error("graph has {expected} inputs but {actual} specs were supplied")]
    InputCount { expected: usize, actual: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Per-node output specs produced by [`Graph::infer_shapes`].
pub type ShapeMap = BTreeMap<NodeId, Vec<InferredSpec>>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    nodes: BTreeMap<NodeId, Node>,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Assembles a graph from parts without validating it.
    pub fn from_parts(nodes: Vec<Node>, inputs: Vec<NodeId>, outputs: Vec<NodeId>) -> Self {
        Graph {
            nodes: nodes.into_iter().map(|n| (n.id, n)).collect(),
            inputs,
            outputs,
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn op_count(&self) -> usize {
        self.nodes.values().filter(|n| n.is_op()).count()
    }

    pub fn input_specs(&self) -> Vec<TensorSpec> {
        self.inputs
            .iter()
            .filter_map(|id| self.nodes.get(id))
            .map(|n| n.spec().clone())
            .collect()
    }

    pub fn next_id(&self) -> NodeId {
        NodeId(self.nodes.keys().next_back().map_or(0, |id| id.0 + 1))
    }

    /// Spec of the tensor flowing out of `port`, if it exists.
    pub fn port_spec(&self, port: PortRef) -> Option<&TensorSpec> {
        self.nodes.get(&port.node)?.outputs.get(port.slot)
    }

    /// Adds a node under a fresh id. `Input` and `Output` nodes are appended
    /// to the graph boundary lists.
    pub fn add_node(
        &mut self,
        kind: NodeKind,
        inputs: Vec<PortRef>,
        outputs: Vec<TensorSpec>,
    ) -> NodeId {
        let id = self.next_id();
        self.insert_node(Node {
            id,
            kind,
            inputs,
            outputs,
        });
        id
    }

    pub fn insert_node(&mut self, node: Node) {
        match node.kind {
            NodeKind::Input => self.inputs.push(node.id),
            NodeKind::Output => self.outputs.push(node.id),
            _ => {}
        }
        self.nodes.insert(node.id, node);
    }

    pub fn remove_node(&mut self, id: NodeId) -> Option<Node> {
        self.inputs.retain(|&i| i != id);
        self.outputs.retain(|&o| o != id);
        self.nodes.remove(&id)
    }

    /// Rewires every consumer of `from` to read `to` instead. Returns the
    /// number of rewired edges.
    pub fn replace_uses(&mut self, from: PortRef, to: PortRef) -> usize {
        let mut n = 0;
        for node in self.nodes.values_mut() {
            for port in node.inputs.iter_mut() {
                if *port == from {
                    *port = to;
                    n += 1;
                }
            }
        }
        n
    }

    /// Consumers of every node: `(consumer, input index)` pairs.
    pub fn consumers(&self) -> BTreeMap<NodeId, Vec<(NodeId, usize)>> {
        let mut map: BTreeMap<NodeId, Vec<(NodeId, usize)>> = BTreeMap::new();
        for node in self.nodes.values() {
            for (i, port) in node.inputs.iter().enumerate() {
                map.entry(port.node).or_default().push((node.id, i));
            }
        }
        map
    }

    pub fn consumer_count(&self, port: PortRef) -> usize {
        self.nodes
            .values()
            .flat_map(|n| n.inputs.iter())
            .filter(|p| **p == port)
            .count()
    }

    /// Node ids in dependency order, ties broken by ascending id.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let mut indegree: BTreeMap<NodeId, usize> = self.nodes.keys().map(|&id| (id, 0)).collect();
        let mut succ: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in self.nodes.values() {
            for port in &node.inputs {
                if !self.nodes.contains_key(&port.node) {
                    return Err(GraphError::DanglingEdge {
                        node: node.id,
                        detail: format!("producer {} does not exist", port.node),
                    });
                }
                *indegree.get_mut(&node.id).unwrap() += 1;
                succ.entry(port.node).or_default().push(node.id);
            }
        }
        let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| Reverse(id))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for &s in succ.get(&id).into_iter().flatten() {
                let d = indegree.get_mut(&s).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(s));
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = indegree
                .iter()
                .find(|(_, &d)| d > 0)
                .map(|(&id, _)| id)
                .expect("some node keeps a positive in-degree");
            return Err(GraphError::CycleDetected { node: stuck });
        }
        Ok(order)
    }

    /// Nodes from which some `Output` node is reachable, outputs included.
    pub fn live_nodes(&self) -> BTreeSet<NodeId> {
        let mut live = BTreeSet::new();
        let mut queue: VecDeque<NodeId> = self
            .nodes
            .values()
            .filter(|n| matches!(n.kind, NodeKind::Output))
            .map(|n| n.id)
            .collect();
        while let Some(id) = queue.pop_front() {
            if !live.insert(id) {
                continue;
            }
            if let Some(node) = self.nodes.get(&id) {
                queue.extend(node.inputs.iter().map(|p| p.node));
            }
        }
        live
    }

    /// Strict ancestors of `id` (every node with a path into it).
    pub fn ancestors(&self, id: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeId> = self
            .nodes
            .get(&id)
            .map(|n| n.inputs.iter().map(|p| p.node).collect())
            .unwrap_or_default();
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                if let Some(node) = self.nodes.get(&n) {
                    stack.extend(node.inputs.iter().map(|p| p.node));
                }
            }
        }
        seen
    }

    /// Checks every structural and typing invariant of the graph.
    pub fn validate(&self) -> Result<(), GraphError> {
        self.validate_boundary()?;
        let order = self.topo_order()?;
        for id in &order {
            let node = &self.nodes[id];
            self.check_node(node)?;
        }
        let live = self.live_nodes();
        if let Some(&id) = self.inputs.iter().find(|id| !live.contains(id)) {
            return Err(GraphError::UnreachableInput { node: id });
        }
        Ok(())
    }

    fn validate_boundary(&self) -> Result<(), GraphError> {
        let boundary = |node: NodeId, detail: &str| GraphError::Boundary {
            node,
            detail: detail.to_string(),
        };
        let listed_inputs: BTreeSet<_> = self.inputs.iter().copied().collect();
        let listed_outputs: BTreeSet<_> = self.outputs.iter().copied().collect();
        if listed_inputs.len() != self.inputs.len() {
            return Err(boundary(self.inputs[0], "input listed twice"));
        }
        if listed_outputs.len() != self.outputs.len() {
            return Err(boundary(self.outputs[0], "output listed twice"));
        }
        for &id in self.inputs.iter().chain(&self.outputs) {
            if !self.nodes.contains_key(&id) {
                return Err(boundary(id, "listed boundary node does not exist"));
            }
        }
        for node in self.nodes.values() {
            match node.kind {
                NodeKind::Input if !listed_inputs.contains(&node.id) => {
                    return Err(boundary(node.id, "input node missing from graph inputs"))
                }
                NodeKind::Output if !listed_outputs.contains(&node.id) => {
                    return Err(boundary(node.id, "output node missing from graph outputs"))
                }
                NodeKind::Input | NodeKind::Output => {}
                _ if listed_inputs.contains(&node.id) || listed_outputs.contains(&node.id) => {
                    return Err(boundary(node.id, "boundary list names a non-boundary node"))
                }
                _ => {}
            }
            for port in &node.inputs {
                match self.nodes.get(&port.node) {
                    None => {
                        return Err(GraphError::DanglingEdge {
                            node: node.id,
                            detail: format!("producer {} does not exist", port.node),
                        })
                    }
                    Some(p) if port.slot >= p.outputs.len() => {
                        return Err(GraphError::DanglingEdge {
                            node: node.id,
                            detail: format!(
                                "producer {} has no output slot {}",
                                port.node, port.slot
                            ),
                        })
                    }
                    Some(p) if matches!(p.kind, NodeKind::Output) => {
                        return Err(GraphError::DanglingEdge {
                            node: node.id,
                            detail: format!("output node {} cannot feed other nodes", port.node),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn check_node(&self, node: &Node) -> Result<(), GraphError> {
        let mismatch = |detail: String| GraphError::SignatureMismatch {
            node: node.id,
            detail,
        };
        let input_specs: Vec<&TensorSpec> = node
            .inputs
            .iter()
            .map(|p| self.port_spec(*p).expect("edges checked before signatures"))
            .collect();
        let expected: Vec<TensorSpec> = match &node.kind {
            NodeKind::Input => {
                if !node.inputs.is_empty() || node.outputs.len() != 1 {
                    return Err(mismatch(
                        "input nodes take no inputs and have one output".into(),
                    ));
                }
                node.outputs.clone()
            }
            NodeKind::Constant(t) => {
                if !node.inputs.is_empty() {
                    return Err(mismatch("constants take no inputs".into()));
                }
                vec![t.spec().clone()]
            }
            NodeKind::Output => {
                if node.inputs.len() != 1 {
                    return Err(mismatch(format!(
                        "output nodes take one input, got {}",
                        node.inputs.len()
                    )));
                }
                vec![input_specs[0].clone()]
            }
            NodeKind::Op(op) => {
                let inferred = infer_op(op, &input_specs, node.outputs.first())
                    .map_err(|e| mismatch(e.to_string()))?;
                vec![inferred.spec]
            }
        };
        if node.outputs != expected {
            return Err(mismatch(format!(
                "declared outputs {:?} but signature yields {:?}",
                node.outputs, expected
            )));
        }
        for spec in &node.outputs {
            spec.check(usize::MAX)
                .map_err(|e| mismatch(e.to_string()))?;
        }
        Ok(())
    }

    /// Static output specs of every node given concrete graph input specs.
    pub fn infer_shapes(&self, input_specs: &[TensorSpec]) -> Result<ShapeMap, InferError> {
        if input_specs.len() != self.inputs.len() {
            return Err(InferError::InputCount {
                expected: self.inputs.len(),
                actual: input_specs.len(),
            });
        }
        let given: BTreeMap<NodeId, &TensorSpec> =
            self.inputs.iter().copied().zip(input_specs).collect();
        let mut map = ShapeMap::new();
        for id in self.topo_order()? {
            let node = &self.nodes[&id];
            let specs = match &node.kind {
                NodeKind::Input => vec![InferredSpec {
                    spec: given[&id].clone(),
                    dynamic_axis: None,
                }],
                NodeKind::Constant(t) => vec![InferredSpec {
                    spec: t.spec().clone(),
                    dynamic_axis: None,
                }],
                NodeKind::Output => {
                    let p = node.inputs[0];
                    vec![InferredSpec {
                        spec: map[&p.node][p.slot].spec.clone(),
                        dynamic_axis: None,
                    }]
                }
                NodeKind::Op(op) => {
                    let inputs: Vec<&TensorSpec> = node
                        .inputs
                        .iter()
                        .map(|p| &map[&p.node][p.slot].spec)
                        .collect();
                    let inferred = infer_op(op, &inputs, node.outputs.first()).map_err(|e| {
                        let (expected, actual) = match e {
                            OpCheckError::Shape { expected, actual } => (expected, actual),
                            other => ("a valid signature".to_string(), other.to_string()),
                        };
                        ShapeError {
                            node: id,
                            expected,
                            actual,
                        }
                    })?;
                    vec![inferred]
                }
            };
            map.insert(id, specs);
        }
        Ok(map)
    }
}
