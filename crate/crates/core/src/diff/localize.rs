use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{CompileFailure, ExecutionTrace, NodeOutcome};
use crate::graph::{Graph, NodeId};

use super::cluster::ClusterKey;
use super::{compare_tensors, mad, Comparison, DivergenceClass, ToleranceConfig};

/// Floor for the denominator of the rate of change.
const RATE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LocalizeError {
    #[error("runs agree on every output")]
    NoDivergence,
    #[error("traces are for different graphs ({a} vs {b})")]
    GraphMismatch { a: String, b: String },
}

/// Backend profile and execution mode of one run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunLabel {
    pub backend: String,
    pub mode: String,
}

impl RunLabel {
    pub fn new(backend: impl Into<String>, mode: impl Into<String>) -> Self {
        RunLabel {
            backend: backend.into(),
            mode: mode.into(),
        }
    }

    pub fn of(trace: &ExecutionTrace) -> Self {
        RunLabel::new(&trace.backend, &trace.mode)
    }
}

impl fmt::Display for RunLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.backend, self.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Equivalent,
    /// `diff` is absent when the values differ in class (NaN against a
    /// number, say) or in shape.
    Divergent {
        class: DivergenceClass,
        index: Option<usize>,
        diff: Option<f64>,
        bound: Option<f64>,
    },
    /// At least one side failed, and not in the same way as the other.
    /// Labels are error kinds, compile failure labels or `Ok`.
    IncomparableFailure {
        a: String,
        b: String,
    },
    /// Both sides failed with the same error kind at the same node.
    BothFailed {
        kind: String,
    },
}

impl Verdict {
    fn from_comparison(c: Comparison) -> Verdict {
        match c {
            Comparison::Equivalent => Verdict::Equivalent,
            Comparison::Divergent {
                index,
                diff,
                bound,
                class,
            } => Verdict::Divergent {
                class,
                index: Some(index),
                diff: diff.is_finite().then_some(diff),
                bound: Some(bound),
            },
            Comparison::ShapeMismatch { .. } => Verdict::Divergent {
                class: DivergenceClass::Shape,
                index: None,
                diff: None,
                bound: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputVerdict {
    pub output: NodeId,
    pub verdict: Verdict,
}

/// One node on the path from the culprit to a divergent output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub node: NodeId,
    pub op: String,
    pub mad: f64,
    pub rate: f64,
}

/// First node, in topological order, where the two runs stopped failing or
/// succeeding alike.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSite {
    /// Absent for compile failures not tied to one node.
    pub node: Option<NodeId>,
    pub op: String,
    pub a: String,
    pub b: String,
}

/// Per-node comparison of two runs.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeComparison {
    Equivalent,
    Divergent {
        class: DivergenceClass,
        mad: f64,
    },
    /// Same failure label on both sides.
    BothFailed,
    /// One side produced a value the other did not.
    FailureMismatch {
        a: String,
        b: String,
    },
    /// The node was not executed on at least one side (compiled away).
    Missing,
}

/// Result of comparing a candidate run against a reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub graph_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Candidate first, reference second.
    pub backends: [RunLabel; 2],
    pub verdicts: Vec<OutputVerdict>,
    pub culprit: Option<NodeId>,
    #[serde(default)]
    pub culprit_op: Option<String>,
    #[serde(default)]
    pub mad_chain: Vec<ChainStep>,
    #[serde(default)]
    pub failure: Option<FailureSite>,
    pub cluster_key: Option<ClusterKey>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings: BTreeMap<String, u64>,
}

/// Graph-level outcome of one comparison, used for tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    Equivalent,
    Divergent,
    FailureDivergent,
    BothFailed,
}

impl DivergenceReport {
    pub fn category(&self) -> Category {
        let has = |f: fn(&Verdict) -> bool| self.verdicts.iter().any(|v| f(&v.verdict));
        if has(|v| matches!(v, Verdict::IncomparableFailure { .. })) {
            Category::FailureDivergent
        } else if has(|v| matches!(v, Verdict::Divergent { .. })) {
            Category::Divergent
        } else if !self.verdicts.is_empty()
            && self
                .verdicts
                .iter()
                .all(|v| matches!(v.verdict, Verdict::BothFailed { .. }))
        {
            Category::BothFailed
        } else {
            Category::Equivalent
        }
    }

    pub fn is_equivalent(&self) -> bool {
        self.category() == Category::Equivalent
    }

    /// MAD at the culprit, or 0 for reports without one.
    pub fn culprit_mad(&self) -> f64 {
        self.mad_chain.first().map_or(0.0, |s| s.mad)
    }
}

/// Label of `node`'s outcome with skips resolved to the failure that caused
/// them, plus the failing node. A compile failure labels every node.
fn resolved_label(
    trace: &ExecutionTrace,
    outcomes: &BTreeMap<NodeId, &NodeOutcome>,
    node: NodeId,
) -> (String, Option<NodeId>) {
    if let Some(f) = &trace.compile_failure {
        return (f.label().to_string(), None);
    }
    match outcomes.get(&node) {
        None => ("Missing".into(), None),
        Some(NodeOutcome::Ok(_)) => ("Ok".into(), None),
        Some(NodeOutcome::Failed(e)) => (e.kind.to_string(), Some(node)),
        Some(NodeOutcome::Skipped { cause }) => {
            // Causes are executed ids; map back for compiled runs.
            let original = trace
                .node_map
                .as_ref()
                .and_then(|m| m.get(cause).copied())
                .unwrap_or(*cause);
            match trace.outcome(*cause).and_then(NodeOutcome::error) {
                Some(e) => (e.kind.to_string(), Some(original)),
                None => ("Skipped".into(), Some(original)),
            }
        }
    }
}

/// Failure label of output `node` in `trace`, with skips resolved.
pub fn output_label(trace: &ExecutionTrace, node: NodeId) -> String {
    resolved_label(trace, &trace.by_original_id(), node).0
}

fn compare_node(
    a: Option<&&NodeOutcome>,
    b: Option<&&NodeOutcome>,
    tol: &ToleranceConfig,
) -> NodeComparison {
    let (Some(a), Some(b)) = (a, b) else {
        return NodeComparison::Missing;
    };
    match (a, b) {
        (NodeOutcome::Ok(x), NodeOutcome::Ok(y)) => match compare_tensors(x, y, tol).class() {
            None => NodeComparison::Equivalent,
            Some(class) => NodeComparison::Divergent {
                class,
                mad: mad(x, y),
            },
        },
        (NodeOutcome::Ok(_), _) | (_, NodeOutcome::Ok(_)) => NodeComparison::FailureMismatch {
            a: a.label(),
            b: b.label(),
        },
        _ if a.label() == b.label() => NodeComparison::BothFailed,
        _ => NodeComparison::FailureMismatch {
            a: a.label(),
            b: b.label(),
        },
    }
}

fn node_op(graph: &Graph, id: NodeId) -> String {
    graph.node(id).map_or("?", |n| n.kind.name()).to_string()
}

/// Compares candidate `a` against reference `b` on every output and, when
/// something diverges, locates where.
pub fn compare_traces(
    graph: &Graph,
    a: &ExecutionTrace,
    b: &ExecutionTrace,
    tol: &ToleranceConfig,
) -> Result<DivergenceReport, LocalizeError> {
    if a.graph_id != b.graph_id {
        return Err(LocalizeError::GraphMismatch {
            a: a.graph_id.clone(),
            b: b.graph_id.clone(),
        });
    }
    let oa = a.by_original_id();
    let ob = b.by_original_id();

    let mut verdicts = Vec::with_capacity(graph.outputs().len());
    for &out in graph.outputs() {
        let verdict = match (oa.get(&out), ob.get(&out)) {
            (Some(NodeOutcome::Ok(x)), Some(NodeOutcome::Ok(y))) => {
                Verdict::from_comparison(compare_tensors(x, y, tol))
            }
            _ => {
                let (la, ra) = resolved_label(a, &oa, out);
                let (lb, rb) = resolved_label(b, &ob, out);
                if la == lb && ra == rb && la != "Ok" {
                    Verdict::BothFailed { kind: la }
                } else {
                    Verdict::IncomparableFailure { a: la, b: lb }
                }
            }
        };
        verdicts.push(OutputVerdict {
            output: out,
            verdict,
        });
    }

    let order = graph
        .topo_order()
        .unwrap_or_else(|_| graph.node_ids().collect());
    let comparisons: BTreeMap<NodeId, NodeComparison> = order
        .iter()
        .map(|&id| (id, compare_node(oa.get(&id), ob.get(&id), tol)))
        .collect();

    let mut report = DivergenceReport {
        graph_id: a.graph_id.clone(),
        seed: None,
        backends: [RunLabel::of(a), RunLabel::of(b)],
        verdicts,
        culprit: None,
        culprit_op: None,
        mad_chain: Vec::new(),
        failure: None,
        cluster_key: None,
        timings: BTreeMap::new(),
    };

    // Numeric localization over the ancestors of divergent outputs.
    let divergent_outputs: BTreeSet<NodeId> = report
        .verdicts
        .iter()
        .filter(|v| matches!(v.verdict, Verdict::Divergent { .. }))
        .map(|v| v.output)
        .collect();
    if !divergent_outputs.is_empty() {
        let mut region: BTreeSet<NodeId> = divergent_outputs.clone();
        for &o in &divergent_outputs {
            region.extend(graph.ancestors(o));
        }
        let culprit = order.iter().copied().find(|id| {
            region.contains(id) && matches!(comparisons[id], NodeComparison::Divergent { .. })
        });
        if let Some(culprit) = culprit {
            report.culprit = Some(culprit);
            report.culprit_op = Some(node_op(graph, culprit));
            report.mad_chain = mad_chain(graph, culprit, &region, &comparisons);
            let peak = report.mad_chain.iter().enumerate().fold(0, |best, (i, s)| {
                if s.rate > report.mad_chain[best].rate {
                    i
                } else {
                    best
                }
            });
            let peak_node = report.mad_chain[peak].node;
            let class = match (&comparisons[&peak_node], &comparisons[&culprit]) {
                (NodeComparison::Divergent { class, .. }, _)
                | (_, NodeComparison::Divergent { class, .. }) => *class,
                _ => DivergenceClass::Numeric,
            };
            report.cluster_key = Some(ClusterKey {
                op: report.mad_chain[peak].op.clone(),
                class,
            });
        }
    }

    // Failure localization: the first node where one side fails and the
    // other does not, or both fail differently.
    let failure_outputs = report
        .verdicts
        .iter()
        .any(|v| matches!(v.verdict, Verdict::IncomparableFailure { .. }));
    if failure_outputs {
        if let Some(cf) = a.compile_failure.as_ref().or(b.compile_failure.as_ref()) {
            let node = match cf {
                CompileFailure::Unsupported { node, .. } => Some(*node),
                _ => None,
            };
            let label = |t: &ExecutionTrace| {
                t.compile_failure
                    .as_ref()
                    .map_or_else(|| "Ok".to_string(), |f| f.label().to_string())
            };
            report.failure = Some(FailureSite {
                node,
                op: node.map_or_else(|| cf.label().to_string(), |n| node_op(graph, n)),
                a: label(a),
                b: label(b),
            });
        } else {
            let site = order.iter().find_map(|id| match &comparisons[id] {
                NodeComparison::FailureMismatch { a: la, b: lb }
                    if la != "Skipped" || lb != "Skipped" =>
                {
                    let both_non_fail =
                        (la == "Ok" || la == "Skipped") && (lb == "Ok" || lb == "Skipped");
                    (!both_non_fail).then(|| FailureSite {
                        node: Some(*id),
                        op: node_op(graph, *id),
                        a: la.clone(),
                        b: lb.clone(),
                    })
                }
                _ => None,
            });
            report.failure = site;
        }
        if report.cluster_key.is_none() {
            if let Some(site) = &report.failure {
                report.cluster_key = Some(ClusterKey {
                    op: site.op.clone(),
                    class: DivergenceClass::FailureKind,
                });
            }
        }
    }
    Ok(report)
}

/// Like [`compare_traces`], but an all-equivalent pair is an error.
pub fn localize(
    graph: &Graph,
    a: &ExecutionTrace,
    b: &ExecutionTrace,
    tol: &ToleranceConfig,
) -> Result<DivergenceReport, LocalizeError> {
    let report = compare_traces(graph, a, b, tol)?;
    if report.culprit.is_none() && report.failure.is_none() {
        return Err(LocalizeError::NoDivergence);
    }
    Ok(report)
}

fn node_mad(c: Option<&NodeComparison>) -> f64 {
    match c {
        Some(NodeComparison::Divergent { mad, .. }) => *mad,
        Some(NodeComparison::FailureMismatch { .. }) => 1.0,
        _ => 0.0,
    }
}

fn clamp_rate(r: f64) -> f64 {
    if r.is_nan() {
        0.0
    } else {
        r.clamp(-f64::MAX, f64::MAX)
    }
}

/// Greedy path from the culprit toward a divergent output, always stepping
/// to the consumer with the largest MAD.
fn mad_chain(
    graph: &Graph,
    culprit: NodeId,
    region: &BTreeSet<NodeId>,
    comparisons: &BTreeMap<NodeId, NodeComparison>,
) -> Vec<ChainStep> {
    let consumers = graph.consumers();
    let producer_mad = graph
        .node(culprit)
        .map(|n| {
            n.inputs
                .iter()
                .map(|p| node_mad(comparisons.get(&p.node)))
                .fold(0.0, f64::max)
        })
        .unwrap_or(0.0);

    let mut chain = Vec::new();
    let mut prev = producer_mad;
    let mut current = culprit;
    let mut visited = BTreeSet::new();
    loop {
        let m = node_mad(comparisons.get(&current));
        chain.push(ChainStep {
            node: current,
            op: node_op(graph, current),
            mad: m,
            rate: clamp_rate((m - prev) / prev.max(RATE_EPS)),
        });
        visited.insert(current);
        prev = m;
        let next = consumers
            .get(&current)
            .into_iter()
            .flatten()
            .map(|&(c, _)| c)
            .filter(|c| region.contains(c) && !visited.contains(c))
            .fold(None, |best: Option<(NodeId, f64)>, c| {
                let cm = node_mad(comparisons.get(&c));
                match best {
                    Some((_, bm)) if bm >= cm => best,
                    _ => Some((c, cm)),
                }
            });
        match next {
            Some((c, _)) => current = c,
            None => break,
        }
    }
    chain
}
