use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IteratorRandom;
use rand::Rng as _;

use super::{Corpus, CorpusError};
use crate::graph::{Graph, Node, NodeId, NodeKind, PortRef, TensorSpec};
use crate::rng::Rng;

pub const DEFAULT_MAX_NODES: usize = 12;

/// A connected piece of one corpus graph, made self-contained: every edge
/// that entered the sampled node set from outside now comes from a fresh
/// `Input`, and every sampled value used outside it feeds a fresh `Output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub graph: Graph,
    /// Architecture hash of the source entry.
    pub source: String,
    /// Subgraph node id to the id it had in the source graph. Fresh
    /// boundary nodes are absent.
    pub origin: BTreeMap<NodeId, NodeId>,
}

impl Subgraph {
    /// Dangling in-edges: fresh `Input` nodes and the spec they must carry.
    pub fn dangling_inputs(&self) -> Vec<(NodeId, TensorSpec)> {
        self.graph
            .inputs()
            .iter()
            .map(|&id| {
                (
                    id,
                    self.graph.node(id).expect("input exists").spec().clone(),
                )
            })
            .collect()
    }

    /// Dangling out-edges: fresh `Output` nodes and the spec they carry.
    pub fn dangling_outputs(&self) -> Vec<(NodeId, TensorSpec)> {
        self.graph
            .outputs()
            .iter()
            .map(|&id| {
                (
                    id,
                    self.graph.node(id).expect("output exists").spec().clone(),
                )
            })
            .collect()
    }

    /// Source ids of the sampled operator nodes.
    pub fn source_ops(&self) -> BTreeSet<NodeId> {
        self.origin
            .iter()
            .filter(|(id, _)| self.graph.node(**id).is_some_and(Node::is_op))
            .map(|(_, &src)| src)
            .collect()
    }
}

/// Operator-node neighbours of `id` in either edge direction.
fn op_neighbors(
    graph: &Graph,
    consumers: &BTreeMap<NodeId, Vec<(NodeId, usize)>>,
    id: NodeId,
) -> Vec<NodeId> {
    let node = graph.node(id).expect("node exists");
    let producers = node.inputs.iter().map(|p| p.node);
    let users = consumers.get(&id).into_iter().flatten().map(|&(c, _)| c);
    producers
        .chain(users)
        .filter(|n| graph.node(*n).is_some_and(Node::is_op))
        .collect()
}

/// Picks a corpus entry uniformly, then grows a random walk from a uniform
/// operator node, adding a uniform unvisited operator neighbour of the
/// visited set until `max_nodes` operators are taken or none is left.
/// Constants feeding sampled operators come along and do not count.
pub fn sample_subgraph(
    corpus: &Corpus,
    rng: &mut Rng,
    max_nodes: usize,
) -> Result<Subgraph, CorpusError> {
    let candidates: Vec<_> = corpus
        .entries()
        .filter(|e| e.graph.op_count() > 0)
        .collect();
    if candidates.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let entry = candidates[rng.gen_range(0..candidates.len())];
    let source = &entry.graph;
    let consumers = source.consumers();

    let start = source
        .nodes()
        .filter(|n| n.is_op())
        .map(|n| n.id)
        .choose(rng)
        .expect("entry has operators");
    let mut picked = BTreeSet::from([start]);
    let mut frontier: BTreeSet<NodeId> = op_neighbors(source, &consumers, start)
        .into_iter()
        .collect();
    while picked.len() < max_nodes.max(1) {
        frontier.retain(|n| !picked.contains(n));
        let Some(&next) = frontier.iter().choose(rng) else {
            break;
        };
        picked.insert(next);
        frontier.extend(op_neighbors(source, &consumers, next));
    }

    Ok(extract(source, &entry.arch_hash, &picked, &consumers))
}

fn extract(
    source: &Graph,
    source_hash: &str,
    picked: &BTreeSet<NodeId>,
    consumers: &BTreeMap<NodeId, Vec<(NodeId, usize)>>,
) -> Subgraph {
    let order = source.topo_order().expect("corpus graphs are acyclic");
    let mut g = Graph::new();
    let mut origin = BTreeMap::new();
    // Source port to the port standing for it in the subgraph.
    let mut ports: BTreeMap<PortRef, PortRef> = BTreeMap::new();

    for &id in order.iter().filter(|id| picked.contains(id)) {
        let node = source.node(id).expect("picked node exists");
        let mut inputs = Vec::with_capacity(node.inputs.len());
        for &p in &node.inputs {
            if let Some(&mapped) = ports.get(&p) {
                inputs.push(mapped);
                continue;
            }
            let producer = source.node(p.node).expect("producer exists");
            let spec = source.port_spec(p).expect("producer slot exists").clone();
            let mapped: PortRef = match &producer.kind {
                NodeKind::Constant(t) => {
                    let c = g.add_node(NodeKind::Constant(t.clone()), vec![], vec![spec]);
                    origin.insert(c, p.node);
                    c.into()
                }
                // Fresh inputs are always materialized row-major.
                _ => g
                    .add_node(NodeKind::Input, vec![], vec![spec.with_contiguous(true)])
                    .into(),
            };
            ports.insert(p, mapped);
            inputs.push(mapped);
        }
        let new = g.add_node(node.kind.clone(), inputs, node.outputs.clone());
        origin.insert(new, id);
        for slot in 0..node.outputs.len() {
            ports.insert(PortRef::new(id, slot), PortRef::new(new, slot));
        }
    }

    // Values read outside the sample, or not read at all, become outputs.
    for &id in order.iter().filter(|id| picked.contains(id)) {
        let users = consumers.get(&id).map(Vec::as_slice).unwrap_or_default();
        if users.is_empty() || users.iter().any(|(c, _)| !picked.contains(c)) {
            let port = ports[&PortRef::new(id, 0)];
            let spec = g.port_spec(port).expect("mapped port exists").clone();
            g.add_node(NodeKind::Output, vec![port], vec![spec]);
        }
    }

    Subgraph {
        graph: g,
        source: source_hash.to_string(),
        origin,
    }
}
