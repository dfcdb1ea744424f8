//! Graph optimization passes and the compile driver.
//!
//! Passes run round-robin until a full sweep changes nothing. A pipeline
//! whose passes keep undoing each other never reaches that point; after the
//! iteration cap the compile fails as stalled, reporting the repeating tail
//! of the pass log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::profile::{BackendProfile, ProfileError};
use super::trace::CompileFailure;
use super::Engine;
use crate::digest::sha256_hex;
use crate::graph::{infer_op, Buffer, Graph, Node, NodeId, NodeKind, Op, OpKind, PortRef, Tensor};

pub const DEFAULT_ITERATION_CAP: usize = 50;

/// Hands out node ids that never collide with ids of the source graph, even
/// ids of nodes a pass has since removed.
#[derive(Debug)]
pub struct IdAlloc {
    next: u32,
}

impl IdAlloc {
    pub fn above(graph: &Graph) -> Self {
        IdAlloc {
            next: graph.next_id().0,
        }
    }

    pub fn fresh(&mut self, graph: &Graph) -> NodeId {
        let id = self.next.max(graph.next_id().0);
        self.next = id + 1;
        NodeId(id)
    }
}

/// One graph rewrite. `apply` returns how many nodes it changed; zero means
/// the pass found nothing to do.
pub trait Pass: Send + Sync {
    fn name(&self) -> &str;
    fn apply(&self, graph: &mut Graph, ids: &mut IdAlloc) -> usize;
}

/// Replaces operators whose inputs are all constants by their value.
pub struct ConstantFolding {
    /// Results larger than this stay unfolded.
    pub max_elements: usize,
}

impl Default for ConstantFolding {
    fn default() -> Self {
        ConstantFolding {
            max_elements: 1 << 16,
        }
    }
}

impl Pass for ConstantFolding {
    fn name(&self) -> &str {
        "ConstantFolding"
    }

    fn apply(&self, g: &mut Graph, _: &mut IdAlloc) -> usize {
        let engine = Engine::reference();
        let live = g.live_nodes();
        let mut changed = 0;
        for id in g.topo_order().unwrap_or_default() {
            let node = &g.node(id).unwrap();
            let Some(op) = node.op() else { continue };
            if !live.contains(&id)
                || op.kind().is_data_dependent_shape()
                || node.spec().element_count() > self.max_elements
            {
                continue;
            }
            let args: Option<Vec<&Tensor>> = node
                .inputs
                .iter()
                .map(|p| match &g.node(p.node)?.kind {
                    NodeKind::Constant(t) => Some(t),
                    _ => None,
                })
                .collect();
            let Some(args) = args else { continue };
            let Ok(value) = engine.eval_op(id, op, &args, node.spec()) else {
                continue;
            };
            if value.spec() != node.spec() {
                continue;
            }
            let node = g.node_mut(id).unwrap();
            node.kind = NodeKind::Constant(value);
            node.inputs.clear();
            changed += 1;
        }
        changed
    }
}

/// Removes nodes that reach no output. Graph inputs are kept so the
/// signature of the graph does not change.
pub struct DeadCodeElimination;

impl Pass for DeadCodeElimination {
    fn name(&self) -> &str {
        "DeadCodeElimination"
    }

    fn apply(&self, g: &mut Graph, _: &mut IdAlloc) -> usize {
        let live = g.live_nodes();
        let dead: Vec<NodeId> = g
            .nodes()
            .filter(|n| !live.contains(&n.id) && !matches!(n.kind, NodeKind::Input))
            .map(|n| n.id)
            .collect();
        for &id in &dead {
            g.remove_node(id);
        }
        dead.len()
    }
}

/// Merges operators and constants that compute the same value.
pub struct CommonSubexpressionElimination;

impl Pass for CommonSubexpressionElimination {
    fn name(&self) -> &str {
        "CommonSubexpressionElimination"
    }

    fn apply(&self, g: &mut Graph, _: &mut IdAlloc) -> usize {
        let mut seen: BTreeMap<String, NodeId> = BTreeMap::new();
        let mut changed = 0;
        for id in g.topo_order().unwrap_or_default() {
            let node = g.node(id).unwrap();
            let key = match &node.kind {
                NodeKind::Op(op) if op.kind() != OpKind::AddInPlace => serde_json::json!({
                    "op": op.kind().name(),
                    "attrs": op.attrs(),
                    "inputs": node.inputs.iter().map(|p| (p.node, p.slot)).collect::<Vec<_>>(),
                    "out": node.outputs,
                })
                .to_string(),
                NodeKind::Constant(t) => serde_json::to_string(t).expect("tensors serialize"),
                _ => continue,
            };
            match seen.get(&key) {
                Some(&first) => {
                    g.replace_uses(id.into(), first.into());
                    g.remove_node(id);
                    changed += 1;
                }
                None => {
                    seen.insert(key, id);
                }
            }
        }
        changed
    }
}

fn constant_all(g: &Graph, port: PortRef, value: f64) -> bool {
    let Some(NodeKind::Constant(t)) = g.node(port.node).map(|n| &n.kind) else {
        return false;
    };
    let d = t.data();
    !matches!(d, Buffer::Bool(_)) && (0..d.len()).all(|i| d.get_f64(i) == value)
}

/// Drops `node` in favour of `replacement` when the two carry the same spec.
fn forward(g: &mut Graph, node: NodeId, replacement: PortRef) -> bool {
    let same = g.port_spec(replacement) == g.node(node).map(|n| n.spec());
    if same {
        g.replace_uses(node.into(), replacement);
        g.remove_node(node);
    }
    same
}

/// `x + 0`, `0 + x`, `x - 0`, `x * 1` and `1 * x` become `x`.
pub struct AlgebraicSimplify;

impl Pass for AlgebraicSimplify {
    fn name(&self) -> &str {
        "AlgebraicSimplify"
    }

    fn apply(&self, g: &mut Graph, _: &mut IdAlloc) -> usize {
        let mut changed = 0;
        for id in g.topo_order().unwrap_or_default() {
            let Some(node) = g.node(id) else { continue };
            let (lhs, rhs) = match node.inputs.as_slice() {
                [a, b] => (*a, *b),
                _ => continue,
            };
            let keep = match node.op_kind() {
                Some(OpKind::Add) if constant_all(g, rhs, 0.0) => Some(lhs),
                Some(OpKind::Add) if constant_all(g, lhs, 0.0) => Some(rhs),
                Some(OpKind::Sub) if constant_all(g, rhs, 0.0) => Some(lhs),
                Some(OpKind::Mul) if constant_all(g, rhs, 1.0) => Some(lhs),
                Some(OpKind::Mul) if constant_all(g, lhs, 1.0) => Some(rhs),
                _ => None,
            };
            if let Some(x) = keep {
                changed += usize::from(forward(g, id, x));
            }
        }
        changed
    }
}

fn constant_bool(g: &Graph, port: PortRef) -> Option<bool> {
    let Some(NodeKind::Constant(t)) = g.node(port.node).map(|n| &n.kind) else {
        return None;
    };
    match t.data() {
        Buffer::Bool(v) if !v.is_empty() && v.iter().all(|&b| b) => Some(true),
        Buffer::Bool(v) if !v.is_empty() && v.iter().all(|&b| !b) => Some(false),
        _ => None,
    }
}

/// Selects with identical branches or a constant condition become the
/// branch they always pick.
pub struct PredicateSimplify;

impl Pass for PredicateSimplify {
    fn name(&self) -> &str {
        "PredicateSimplify"
    }

    fn apply(&self, g: &mut Graph, _: &mut IdAlloc) -> usize {
        let mut changed = 0;
        for id in g.topo_order().unwrap_or_default() {
            let Some(node) = g.node(id) else { continue };
            if node.op_kind() != Some(OpKind::Where) {
                continue;
            }
            let (c, a, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
            let keep = if a == b {
                Some(a)
            } else {
                constant_bool(g, c).map(|on| if on { a } else { b })
            };
            if let Some(x) = keep {
                changed += usize::from(forward(g, id, x));
            }
        }
        changed
    }
}

fn single_use_op(g: &Graph, port: PortRef, kind: OpKind) -> Option<&Node> {
    let n = g.node(port.node)?;
    (n.op_kind() == Some(kind) && g.consumer_count(port) == 1).then_some(n)
}

/// `Where(c, relu(a), relu(b))` becomes `relu(Where(c, a, b))`.
///
/// Together with [`PredicateSink`] this forms a rewrite pair that never
/// settles; it exists to exercise stall detection.
pub struct PredicateHoist;

impl Pass for PredicateHoist {
    fn name(&self) -> &str {
        "PredicateHoist"
    }

    fn apply(&self, g: &mut Graph, ids: &mut IdAlloc) -> usize {
        let mut changed = 0;
        for id in g.topo_order().unwrap_or_default() {
            let Some(node) = g.node(id) else { continue };
            if node.op_kind() != Some(OpKind::Where) {
                continue;
            }
            let (c, p, q) = (node.inputs[0], node.inputs[1], node.inputs[2]);
            if p.node == q.node {
                continue;
            }
            let (Some(rp), Some(rq)) = (
                single_use_op(g, p, OpKind::Relu),
                single_use_op(g, q, OpKind::Relu),
            ) else {
                continue;
            };
            let (a, b) = (rp.inputs[0], rq.inputs[0]);
            let specs = [c, a, b].map(|port| g.port_spec(port).cloned());
            let [Some(sc), Some(sa), Some(sb)] = specs else {
                continue;
            };
            let Ok(inner) = infer_op(&Op::Where, &[&sc, &sa, &sb], None) else {
                continue;
            };
            let inner_id = ids.fresh(g);
            g.insert_node(Node {
                id: inner_id,
                kind: NodeKind::Op(Op::Where),
                inputs: vec![c, a, b],
                outputs: vec![inner.spec],
            });
            let node = g.node_mut(id).unwrap();
            node.kind = NodeKind::Op(Op::Relu);
            node.inputs = vec![inner_id.into()];
            g.remove_node(p.node);
            g.remove_node(q.node);
            changed += 1;
        }
        changed
    }
}

/// `relu(Where(c, a, b))` becomes `Where(c, relu(a), relu(b))`; the inverse
/// of [`PredicateHoist`].
pub struct PredicateSink;

impl Pass for PredicateSink {
    fn name(&self) -> &str {
        "PredicateSink"
    }

    fn apply(&self, g: &mut Graph, ids: &mut IdAlloc) -> usize {
        let mut changed = 0;
        for id in g.topo_order().unwrap_or_default() {
            let Some(node) = g.node(id) else { continue };
            if node.op_kind() != Some(OpKind::Relu) {
                continue;
            }
            let Some(w) = single_use_op(g, node.inputs[0], OpKind::Where) else {
                continue;
            };
            let (w_id, c, a, b) = (w.id, w.inputs[0], w.inputs[1], w.inputs[2]);
            let mut branch = |g: &mut Graph, port: PortRef| -> Option<NodeId> {
                let spec = infer_op(&Op::Relu, &[g.port_spec(port)?], None).ok()?.spec;
                let rid = ids.fresh(g);
                g.insert_node(Node {
                    id: rid,
                    kind: NodeKind::Op(Op::Relu),
                    inputs: vec![port],
                    outputs: vec![spec],
                });
                Some(rid)
            };
            let (Some(ra), Some(rb)) = (branch(g, a), branch(g, b)) else {
                continue;
            };
            let node = g.node_mut(id).unwrap();
            node.kind = NodeKind::Op(Op::Where);
            node.inputs = vec![c, ra.into(), rb.into()];
            g.remove_node(w_id);
            changed += 1;
        }
        changed
    }
}

/// Looks up a pass by name.
pub fn pass_by_name(name: &str) -> Option<Arc<dyn Pass>> {
    let p: Arc<dyn Pass> = match name {
        "ConstantFolding" => Arc::new(ConstantFolding::default()),
        "DeadCodeElimination" => Arc::new(DeadCodeElimination),
        "CommonSubexpressionElimination" => Arc::new(CommonSubexpressionElimination),
        "AlgebraicSimplify" => Arc::new(AlgebraicSimplify),
        "PredicateSimplify" => Arc::new(PredicateSimplify),
        "PredicateHoist" => Arc::new(PredicateHoist),
        "PredicateSink" => Arc::new(PredicateSink),
        _ => return None,
    };
    Some(p)
}

/// Ordered passes plus an iteration cap.
#[derive(Clone)]
pub struct Pipeline {
    label: String,
    passes: Vec<Arc<dyn Pass>>,
    cap: usize,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("label", &self.label)
            .field("passes", &self.pass_names())
            .field("cap", &self.cap)
            .finish()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PipelineFile {
    name: String,
    passes: Vec<String>,
    #[serde(default = "default_cap")]
    cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_ITERATION_CAP
}

impl Pipeline {
    pub fn new(label: impl Into<String>, passes: Vec<Arc<dyn Pass>>, cap: usize) -> Self {
        Pipeline {
            label: label.into(),
            passes,
            cap: cap.max(1),
        }
    }

    pub fn from_names(label: &str, names: &[&str], cap: usize) -> Result<Self, String> {
        let passes = names
            .iter()
            .map(|n| pass_by_name(n).ok_or_else(|| format!("unknown pass `{n}`")))
            .collect::<Result<_, _>>()?;
        Ok(Pipeline::new(label, passes, cap))
    }

    pub fn empty() -> Self {
        Pipeline::new("empty", Vec::new(), DEFAULT_ITERATION_CAP)
    }

    /// Folding and dead-code elimination only.
    pub fn jit() -> Self {
        Pipeline::from_names(
            "jit",
            &["ConstantFolding", "DeadCodeElimination"],
            DEFAULT_ITERATION_CAP,
        )
        .unwrap()
    }

    /// Every sound pass.
    pub fn full() -> Self {
        Pipeline::from_names(
            "full",
            &[
                "ConstantFolding",
                "AlgebraicSimplify",
                "PredicateSimplify",
                "CommonSubexpressionElimination",
                "DeadCodeElimination",
            ],
            DEFAULT_ITERATION_CAP,
        )
        .unwrap()
    }

    /// `{"name": .., "passes": [..], "cap": ..}`
    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path)?;
        let parse = |detail: String| ProfileError::Parse {
            path: path.display().to_string(),
            detail,
        };
        let file: PipelineFile = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
        let names: Vec<&str> = file.passes.iter().map(String::as_str).collect();
        Pipeline::from_names(&file.name, &names, file.cap).map_err(parse)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn pass_names(&self) -> Vec<String> {
        self.passes.iter().map(|p| p.name().to_string()).collect()
    }
}

/// Execution mode: eager, or compiled with some pipeline.
#[derive(Debug, Clone)]
pub enum Mode {
    Eager,
    Compiled(Pipeline),
}

impl Mode {
    /// `eager`, `jit`, `full`, or a path to a pipeline JSON file.
    pub fn parse(s: &str) -> Result<Mode, ProfileError> {
        match s {
            "eager" => Ok(Mode::Eager),
            "jit" => Ok(Mode::Compiled(Pipeline::jit())),
            "full" | "compiled" => Ok(Mode::Compiled(Pipeline::full())),
            path => Pipeline::load(Path::new(path)).map(Mode::Compiled),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Mode::Eager => "eager",
            Mode::Compiled(p) => p.label(),
        }
    }

    pub fn pipeline(&self) -> Option<Pipeline> {
        match self {
            Mode::Eager => None,
            Mode::Compiled(p) => Some(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassLogEntry {
    pub iteration: usize,
    pub pass: String,
    pub changed: usize,
    /// Digest of the graph after the pass, with ids renumbered.
    pub fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct CompiledGraph {
    pub graph: Graph,
    pub log: Vec<PassLogEntry>,
    /// Surviving node id to the original node it replaces. Nodes created by
    /// passes have no entry.
    pub node_map: BTreeMap<NodeId, NodeId>,
}

fn fingerprint(g: &Graph) -> String {
    sha256_hex(&g.renumbered().to_canonical_json())[..16].to_string()
}

/// The shortest period `p` such that the last `p` effective pass
/// applications repeat the `p` before them, with the names of those passes.
pub fn oscillation(log: &[PassLogEntry]) -> Option<Vec<String>> {
    let eff: Vec<&PassLogEntry> = log.iter().filter(|e| e.changed > 0).collect();
    let n = eff.len();
    (1..=n / 2)
        .find(|&p| (n - p..n).all(|i| eff[i].fingerprint == eff[i - p].fingerprint))
        .map(|p| eff[n - p..].iter().map(|e| e.pass.clone()).collect())
}

/// Runs `pipeline` on `graph` to a fixpoint.
pub fn compile(
    pipeline: &Pipeline,
    profile: &BackendProfile,
    graph: &Graph,
) -> Result<CompiledGraph, CompileFailure> {
    for id in graph.topo_order().unwrap_or_default() {
        let node = graph.node(id).unwrap();
        if let Some(kind) = node
            .op_kind()
            .filter(|k| profile.compile_unsupported_ops.contains(k))
        {
            return Err(CompileFailure::Unsupported {
                node: id,
                detail: format!("{kind} cannot be compiled for {}", profile.name),
            });
        }
    }
    let mut g = graph.clone();
    let mut ids = IdAlloc::above(graph);
    let mut log = Vec::new();
    let mut current = fingerprint(&g);
    let mut settled = false;
    for iteration in 0..pipeline.cap {
        let mut total = 0;
        for pass in &pipeline.passes {
            let changed = pass.apply(&mut g, &mut ids);
            if changed > 0 {
                g.validate().map_err(|e| CompileFailure::CompilerBug {
                    pass: pass.name().to_string(),
                    detail: e.to_string(),
                })?;
                current = fingerprint(&g);
            }
            log.push(PassLogEntry {
                iteration,
                pass: pass.name().to_string(),
                changed,
                fingerprint: current.clone(),
            });
            total += changed;
        }
        if total == 0 {
            settled = true;
            break;
        }
    }
    if !settled {
        let cycle = oscillation(&log).unwrap_or_else(|| {
            let last = log.last().map_or(0, |e| e.iteration);
            log.iter()
                .filter(|e| e.iteration == last && e.changed > 0)
                .map(|e| e.pass.clone())
                .collect()
        });
        return Err(CompileFailure::Stalled {
            iterations: pipeline.cap,
            cycle,
        });
    }
    let originals: BTreeSet<NodeId> = graph.node_ids().collect();
    let node_map = g
        .node_ids()
        .filter(|id| originals.contains(id))
        .map(|id| (id, id))
        .collect();
    Ok(CompiledGraph {
        graph: g,
        log,
        node_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::execute_reference;
    use crate::graph::{fixtures, DType, GraphBuilder, TensorSpec};

    fn reference() -> BackendProfile {
        BackendProfile::reference()
    }

    #[test]
    fn constants_fold_and_dead_nodes_go() {
        let mut b = GraphBuilder::new();
        let two = b.constant(Tensor::from_f64([1], vec![2.0]).unwrap());
        let three = b.constant(Tensor::from_f64([1], vec![3.0]).unwrap());
        let sum = b.op(Op::Add, &[two, three]).unwrap();
        let x = b.input(TensorSpec::new([1], DType::F64));
        let y = b.op(Op::Mul, &[x, sum]).unwrap();
        b.output(y);
        let g = b.finish().unwrap();
        let c = compile(&Pipeline::jit(), &reference(), &g).unwrap();
        assert_eq!(c.graph.op_count(), 1);
        let folded = c.graph.node(sum.node).unwrap();
        assert_eq!(
            folded.kind,
            NodeKind::Constant(Tensor::from_f64([1], vec![5.0]).unwrap())
        );
        assert!(c.graph.node(two.node).is_none());
    }

    #[test]
    fn adding_zero_is_removed() {
        let mut b = GraphBuilder::new();
        let x = b.input(TensorSpec::new([3], DType::F32));
        let zero = b.constant(Tensor::zeros(&TensorSpec::new([3], DType::F32)));
        let y = b.op(Op::Add, &[x, zero]).unwrap();
        let out = b.output(y);
        let g = b.finish().unwrap();
        let c = compile(&Pipeline::full(), &reference(), &g).unwrap();
        assert_eq!(c.graph.op_count(), 0);
        assert_eq!(c.graph.node(out).unwrap().inputs[0], x);
    }

    #[test]
    fn hoist_and_sink_stall_with_two_cycle() {
        let g = fixtures::select_of_relus();
        let p =
            Pipeline::from_names("adversarial", &["PredicateHoist", "PredicateSink"], 50).unwrap();
        match compile(&p, &reference(), &g) {
            Err(CompileFailure::Stalled { iterations, cycle }) => {
                assert_eq!(iterations, 50);
                assert_eq!(cycle, vec!["PredicateHoist", "PredicateSink"]);
            }
            other => panic!("expected a stall, got {other:?}"),
        }
    }

    #[test]
    fn either_half_alone_settles() {
        let g = fixtures::select_of_relus();
        for name in ["PredicateHoist", "PredicateSink"] {
            let p = Pipeline::from_names(name, &[name], 50).unwrap();
            assert!(compile(&p, &reference(), &g).is_ok());
        }
    }

    struct Retype;

    impl Pass for Retype {
        fn name(&self) -> &str {
            "Retype"
        }

        fn apply(&self, g: &mut Graph, _: &mut IdAlloc) -> usize {
            let id = g.nodes().find(|n| n.is_op()).map(|n| n.id);
            match id {
                Some(id) => {
                    g.node_mut(id).unwrap().outputs[0].dtype = DType::I32;
                    1
                }
                None => 0,
            }
        }
    }

    #[test]
    fn invalid_pass_output_is_a_compiler_bug() {
        let p = Pipeline::new("broken", vec![Arc::new(Retype)], 5);
        let err = compile(&p, &reference(), &fixtures::linear_layer()).unwrap_err();
        assert!(matches!(err, CompileFailure::CompilerBug { ref pass, .. } if pass == "Retype"));
    }

    #[test]
    fn empty_pipeline_keeps_the_graph() {
        let g = fixtures::linear_layer();
        let c = compile(&Pipeline::empty(), &reference(), &g).unwrap();
        assert_eq!(c.graph, g);
        let eager = execute_reference(&g, &fixtures::linear_layer_inputs());
        let compiled = Engine::reference().execute_compiled(
            &Pipeline::empty(),
            &g,
            &fixtures::linear_layer_inputs(),
        );
        assert_eq!(eager.records.len(), compiled.records.len());
        for (a, b) in eager.records.iter().zip(&compiled.records) {
            assert_eq!(a.outcome, b.outcome);
        }
    }

    #[test]
    fn unsupported_compile_is_reported() {
        let g = fixtures::select_of_relus();
        let err = compile(&Pipeline::full(), &BackendProfile::relaxed_b(), &g).unwrap_err();
        assert!(matches!(err, CompileFailure::Unsupported { .. }));
    }
}
