//! Variant graph synthesis: repeatedly merge random corpus subgraphs into a
//! growing graph, reconciling tensor specs with glue operators, then apply
//! random operator mutations.

mod glue;
mod mutate;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sample_subgraph, Corpus, CorpusError, Subgraph, DEFAULT_MAX_NODES};
use crate::graph::{Graph, GraphError, Node, NodeId, NodeKind, PortRef, DEFAULT_ELEMENT_CAP};
use crate::rng::{rng_from_seed, Rng};

pub use glue::{append_chain, insert_glue};
pub use mutate::{mutate, Mutation, MutationRule, MutationTable, HARDTANH_CAP};

/// Consecutive failed merge attempts after which synthesis stops early.
pub const MAX_MERGE_RETRIES: usize = 16;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("glue tensor of {count} elements exceeds the cap of {cap}")]
    ElementCapExceeded { count: usize, cap: usize },
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("synthesized graph does not validate: {0}")]
    Invalid(#[from] GraphError),
}

impl From<CorpusError> for SynthError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::EmptyCorpus => SynthError::EmptyCorpus,
            other => SynthError::InvalidConfig(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Minimum operator count of the result.
    pub threshold: usize,
    pub mutation_prob: f64,
    pub seed: u64,
    pub element_cap: usize,
    /// Operator budget of each sampled subgraph.
    pub max_subgraph_nodes: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            threshold: 100,
            mutation_prob: 0.25,
            seed: 0,
            element_cap: DEFAULT_ELEMENT_CAP,
            max_subgraph_nodes: DEFAULT_MAX_NODES,
        }
    }
}

impl SynthesisConfig {
    pub fn check(&self) -> Result<(), SynthError> {
        if self.threshold == 0 {
            return Err(SynthError::InvalidConfig("threshold must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(SynthError::InvalidConfig(format!(
                "mutation probability {} outside [0, 1]",
                self.mutation_prob
            )));
        }
        if self.max_subgraph_nodes == 0 {
            return Err(SynthError::InvalidConfig(
                "max_subgraph_nodes must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One edge drawn from an existing output into the incoming subgraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    /// Producer of the consumed graph output.
    pub from: NodeId,
    /// End of the glue chain, now read where the subgraph input was.
    pub to: NodeId,
    pub glue: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    /// Architecture hash of the sampled corpus entry.
    pub source: String,
    pub sampled_ops: usize,
    pub connections: Vec<Connection>,
    pub fresh_inputs: usize,
    /// Failed attempts before this step succeeded.
    pub retries: usize,
    pub op_count: usize,
}

impl MergeStep {
    pub fn glue_ops(&self) -> usize {
        self.connections.iter().map(|c| c.glue.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisLog {
    /// The first step seeds the graph and has no connections.
    pub steps: Vec<MergeStep>,
    /// True when synthesis stopped below the threshold after too many
    /// failed merges.
    pub finalized_early: bool,
    pub mutations: Vec<Mutation>,
}

/// Builds a variant graph from `corpus` as configured.
pub fn synthesize(corpus: &Corpus, cfg: &SynthesisConfig) -> Result<Graph, SynthError> {
    synthesize_with_log(corpus, cfg).map(|(g, _)| g)
}

pub fn synthesize_with_log(
    corpus: &Corpus,
    cfg: &SynthesisConfig,
) -> Result<(Graph, SynthesisLog), SynthError> {
    cfg.check()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut log = SynthesisLog::default();

    let first = sample_subgraph(corpus, &mut rng, cfg.max_subgraph_nodes)?;
    let mut graph = first.graph.clone();
    log.steps.push(MergeStep {
        source: first.source.clone(),
        sampled_ops: first.graph.op_count(),
        connections: Vec::new(),
        fresh_inputs: first.graph.inputs().len(),
        retries: 0,
        op_count: graph.op_count(),
    });

    let mut retries = 0;
    while graph.op_count() < cfg.threshold {
        let sub = sample_subgraph(corpus, &mut rng, cfg.max_subgraph_nodes)?;
        match merge(&graph, &sub, cfg.element_cap, &mut rng) {
            Some((merged, mut step)) => {
                step.retries = retries;
                retries = 0;
                graph = merged;
                step.op_count = graph.op_count();
                log.steps.push(step);
            }
            None => {
                retries += 1;
                if retries >= MAX_MERGE_RETRIES {
                    log.finalized_early = true;
                    break;
                }
            }
        }
    }

    let (mutated, mutations) = mutate(
        &graph,
        &MutationTable::default(),
        cfg.mutation_prob,
        &mut rng,
    );
    log.mutations = mutations;
    mutated.validate()?;
    Ok((mutated, log))
}

/// Wires `k` outputs of `g` into `k` inputs of `sub`, with
/// `k = min(|outputs|, |inputs|, uniform 1..=3)`. Returns `None` when no
/// connection is possible or a glue tensor would exceed the cap.
fn merge(g: &Graph, sub: &Subgraph, cap: usize, rng: &mut Rng) -> Option<(Graph, MergeStep)> {
    let s = &sub.graph;
    let k = g
        .outputs()
        .len()
        .min(s.inputs().len())
        .min(rng.gen_range(1..=3));
    if k == 0 {
        return None;
    }
    let outs: Vec<NodeId> = g.outputs().choose_multiple(rng, k).copied().collect();
    let ins: Vec<NodeId> = s.inputs().choose_multiple(rng, k).copied().collect();

    let mut chains = Vec::with_capacity(k);
    for (&o, &i) in outs.iter().zip(&ins) {
        let producer = g.node(o).expect("output exists").inputs[0];
        let p_spec = g.port_spec(producer).expect("producer exists");
        let c_spec = s.node(i).expect("input exists").spec();
        chains.push((producer, insert_glue(p_spec, c_spec, cap).ok()?));
    }

    let mut out = g.clone();
    for &o in &outs {
        out.remove_node(o);
    }
    // Subgraph input id to the port that now feeds its readers.
    let mut replaced: BTreeMap<NodeId, PortRef> = BTreeMap::new();
    let mut connections = Vec::with_capacity(k);
    for ((producer, chain), &i) in chains.iter().zip(&ins) {
        let end = append_chain(&mut out, *producer, chain);
        replaced.insert(i, end);
        connections.push(Connection {
            from: producer.node,
            to: end.node,
            glue: chain
                .iter()
                .map(|op| op.kind().name().to_string())
                .collect(),
        });
    }

    // Copy the subgraph under fresh ids, in its own topological order so
    // producers are placed first.
    let order = s.topo_order().expect("subgraphs are acyclic");
    let mut ids: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut fresh_inputs = 0;
    for id in order {
        if replaced.contains_key(&id) {
            continue;
        }
        let node = s.node(id).expect("node exists");
        let inputs = node
            .inputs
            .iter()
            .map(|p| match replaced.get(&p.node) {
                Some(&port) => port,
                None => PortRef::new(ids[&p.node], p.slot),
            })
            .collect();
        if matches!(node.kind, NodeKind::Input) {
            fresh_inputs += 1;
        }
        let new = out.next_id();
        out.insert_node(Node {
            id: new,
            kind: node.kind.clone(),
            inputs,
            outputs: node.outputs.clone(),
        });
        ids.insert(id, new);
    }

    let step = MergeStep {
        source: sub.source.clone(),
        sampled_ops: s.op_count(),
        connections,
        fresh_inputs,
        retries: 0,
        op_count: 0,
    };
    Some((out, step))
}
