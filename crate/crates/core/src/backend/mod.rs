//! Profile-driven graph execution.
//!
//! An [`Engine`] interprets a graph node by node in topological order under
//! one [`BackendProfile`]. Execution never fails as a whole: every problem is
//! recorded as the outcome of the node where it happened, and nodes that
//! depend on a failed node are marked skipped.

mod kernels;
pub mod passes;
mod profile;
mod reduce;
mod trace;

use std::collections::BTreeMap;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::graph::{infer_op, Graph, NodeId, NodeKind, Tensor, TensorSpec, DEFAULT_ELEMENT_CAP};
use kernels::Kernel;

pub use passes::{compile, CompiledGraph, IdAlloc, Mode, Pass, PassLogEntry, Pipeline};
pub use profile::{
    BackendProfile, BoundsPolicy, ExceptionalRule, Flaw, InfCastRule, IntDivRule, ProfileError,
    ReductionOrder, UbTable, BUILTIN_PROFILES,
};
pub use reduce::{chunked_tree, sequential, Reducer};
pub use trace::{CompileFailure, ErrorKind, ExecutionTrace, NodeError, NodeOutcome, NodeRecord};

/// Short content digest of an input set.
pub fn inputs_digest(inputs: &[Tensor]) -> String {
    let mut h = Sha256::new();
    for t in inputs {
        h.update(serde_json::to_vec(t.spec()).expect("specs serialize"));
        h.update(t.data().to_le_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// Interpreter bound to one backend profile. Holds no per-graph state, so a
/// single engine can serve concurrent executions.
#[derive(Debug, Clone)]
pub struct Engine {
    profile: BackendProfile,
    element_cap: usize,
}

impl Engine {
    pub fn new(profile: BackendProfile) -> Self {
        Engine {
            profile,
            element_cap: DEFAULT_ELEMENT_CAP,
        }
    }

    pub fn reference() -> Self {
        Engine::new(BackendProfile::reference())
    }

    pub fn with_element_cap(mut self, cap: usize) -> Self {
        self.element_cap = cap;
        self
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    pub fn execute(&self, graph: &Graph, inputs: &[Tensor]) -> ExecutionTrace {
        self.run(graph, inputs, "eager", graph.graph_id(), None)
    }

    /// Compiles with `pipeline`, then executes the optimized graph. A failed
    /// compilation yields a trace without node records.
    pub fn execute_compiled(
        &self,
        pipeline: &Pipeline,
        graph: &Graph,
        inputs: &[Tensor],
    ) -> ExecutionTrace {
        let mode = pipeline.label().to_string();
        match compile(pipeline, &self.profile, graph) {
            Ok(compiled) => self.run(
                &compiled.graph,
                inputs,
                &mode,
                graph.graph_id(),
                Some(compiled.node_map),
            ),
            Err(failure) => ExecutionTrace {
                backend: self.profile.name.clone(),
                mode,
                graph_id: graph.graph_id(),
                inputs_id: inputs_digest(inputs),
                records: Vec::new(),
                outputs: graph.outputs().to_vec(),
                compile_failure: Some(failure),
                node_map: None,
            },
        }
    }

    /// Runs in the given mode; `Mode::Eager` needs no pipeline.
    pub fn execute_mode(&self, mode: &Mode, graph: &Graph, inputs: &[Tensor]) -> ExecutionTrace {
        match mode.pipeline() {
            None => self.execute(graph, inputs),
            Some(p) => self.execute_compiled(&p, graph, inputs),
        }
    }

    fn run(
        &self,
        graph: &Graph,
        inputs: &[Tensor],
        mode: &str,
        graph_id: String,
        node_map: Option<BTreeMap<NodeId, NodeId>>,
    ) -> ExecutionTrace {
        let mut trace = ExecutionTrace {
            backend: self.profile.name.clone(),
            mode: mode.to_string(),
            graph_id,
            inputs_id: inputs_digest(inputs),
            records: Vec::new(),
            outputs: graph.outputs().to_vec(),
            compile_failure: None,
            node_map,
        };
        let Ok(order) = graph.topo_order() else {
            return trace;
        };
        let input_pos: BTreeMap<NodeId, usize> = graph
            .inputs()
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let mut at: BTreeMap<NodeId, usize> = BTreeMap::new();
        for id in order {
            let started = Instant::now();
            let outcome = self.eval_node(graph, id, &trace.records, &at, &input_pos, inputs);
            let micros = started.elapsed().as_micros() as u64;
            at.insert(id, trace.records.len());
            trace.records.push(NodeRecord {
                node: id,
                outcome,
                micros,
            });
        }
        trace
    }

    fn eval_node(
        &self,
        graph: &Graph,
        id: NodeId,
        records: &[NodeRecord],
        at: &BTreeMap<NodeId, usize>,
        input_pos: &BTreeMap<NodeId, usize>,
        inputs: &[Tensor],
    ) -> NodeOutcome {
        let node = graph.node(id).expect("node exists");
        match &node.kind {
            NodeKind::Input => {
                let Some(t) = input_pos.get(&id).and_then(|&i| inputs.get(i)) else {
                    return NodeOutcome::Failed(NodeError::shape(
                        "no tensor supplied for this input",
                    ));
                };
                if !t.spec().same_value_type(node.spec()) {
                    return NodeOutcome::Failed(NodeError::shape(format!(
                        "input expects {:?} {}, got {:?} {}",
                        node.spec().shape,
                        node.spec().dtype,
                        t.shape(),
                        t.dtype()
                    )));
                }
                NodeOutcome::Ok(t.clone())
            }
            NodeKind::Constant(t) => NodeOutcome::Ok(t.clone()),
            NodeKind::Output | NodeKind::Op(_) => {
                if let Some(reason) = self.profile.static_rejection(graph, id) {
                    return NodeOutcome::Failed(NodeError::unsupported(reason));
                }
                let mut args = Vec::with_capacity(node.inputs.len());
                for p in &node.inputs {
                    match &records[at[&p.node]].outcome {
                        NodeOutcome::Ok(t) => args.push(t),
                        NodeOutcome::Failed(_) => return NodeOutcome::Skipped { cause: p.node },
                        NodeOutcome::Skipped { cause } => {
                            return NodeOutcome::Skipped { cause: *cause }
                        }
                    }
                }
                match &node.kind {
                    NodeKind::Op(op) => match self.eval_op(id, op, &args, node.spec()) {
                        Ok(t) => NodeOutcome::Ok(t),
                        Err(e) => NodeOutcome::Failed(e),
                    },
                    _ => NodeOutcome::Ok(args[0].clone()),
                }
            }
        }
    }

    pub(crate) fn eval_op(
        &self,
        id: NodeId,
        op: &crate::graph::Op,
        args: &[&Tensor],
        declared: &TensorSpec,
    ) -> Result<Tensor, NodeError> {
        let specs: Vec<&TensorSpec> = args.iter().map(|t| t.spec()).collect();
        let inferred =
            infer_op(op, &specs, Some(declared)).map_err(|e| NodeError::shape(e.to_string()))?;
        let mut out = inferred.spec;
        if let Some(axis) = inferred.dynamic_axis {
            out.shape[axis] = declared.shape[axis];
        }
        if !out.same_value_type(declared) {
            return Err(NodeError::shape(format!(
                "traced output {:?} {} but inputs give {:?} {}",
                declared.shape, declared.dtype, out.shape, out.dtype
            )));
        }
        let kernel = Kernel {
            profile: &self.profile,
            node: id,
        };
        let count = out.element_count();
        if count > self.element_cap {
            return Err(NodeError::numeric(format!(
                "output of {count} elements exceeds the cap of {}",
                self.element_cap
            )));
        }
        let t = kernel.eval(op, args, &out)?;
        Ok(kernel.post_process(op.kind(), t))
    }
}

/// Runs `graph` eagerly under `profile`.
pub fn execute(profile: &BackendProfile, graph: &Graph, inputs: &[Tensor]) -> ExecutionTrace {
    Engine::new(profile.clone()).execute(graph, inputs)
}

/// Runs `graph` eagerly under the reference profile.
pub fn execute_reference(graph: &Graph, inputs: &[Tensor]) -> ExecutionTrace {
    Engine::reference().execute(graph, inputs)
}

/// Compiles `graph` with `pipeline` for `profile` and runs the result.
pub fn execute_compiled(
    pipeline: &Pipeline,
    profile: &BackendProfile,
    graph: &Graph,
    inputs: &[Tensor],
) -> ExecutionTrace {
    Engine::new(profile.clone()).execute_compiled(pipeline, graph, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{fixtures, DType, GraphBuilder, Op};

    fn single(op: Op, inputs: Vec<Tensor>) -> (Graph, Vec<Tensor>) {
        let mut b = GraphBuilder::new();
        let ports: Vec<_> = inputs.iter().map(|t| b.input(t.spec().clone())).collect();
        let y = b.op(op, &ports).unwrap();
        b.output(y);
        (b.finish().unwrap(), inputs)
    }

    fn output(trace: &ExecutionTrace) -> &Tensor {
        trace
            .outcome(trace.outputs[0])
            .unwrap()
            .tensor()
            .expect("output computed")
    }

    #[test]
    fn linear_layer_with_identity_weight_adds_inputs() {
        let g = fixtures::linear_layer();
        let trace = execute_reference(&g, &fixtures::linear_layer_inputs());
        assert_eq!(
            output(&trace).data(),
            &crate::graph::Buffer::F64(vec![1.0; 8])
        );
    }

    #[test]
    fn unsupported_relu_skips_dependents() {
        let g = fixtures::linear_layer();
        let profile = BackendProfile {
            unsupported_ops: [crate::graph::OpKind::Relu].into(),
            ..BackendProfile::reference()
        };
        let trace = execute(&profile, &g, &fixtures::linear_layer_inputs());
        let relu = g
            .nodes()
            .find(|n| n.op_kind() == Some(crate::graph::OpKind::Relu))
            .unwrap()
            .id;
        assert_eq!(
            trace.outcome(relu).unwrap().error().unwrap().kind,
            ErrorKind::Unsupported
        );
        assert_eq!(
            trace.outcome(g.outputs()[0]),
            Some(&NodeOutcome::Skipped { cause: relu })
        );
    }

    #[test]
    fn out_of_range_gather_depends_on_bounds_policy() {
        let x = Tensor::from_f64([4], vec![10.0, 11.0, 12.0, 13.0]).unwrap();
        let idx = Tensor::from_i64([1], vec![7]).unwrap();
        let (g, inputs) = single(Op::Gather { axis: 0 }, vec![x, idx]);
        let strict = execute_reference(&g, &inputs);
        let gather = NodeId(2);
        assert_eq!(
            strict.outcome(gather).unwrap().error().unwrap().kind,
            ErrorKind::OutOfBounds
        );
        let wrap = execute(&BackendProfile::relaxed_a(), &g, &inputs);
        assert_eq!(output(&wrap).data(), &crate::graph::Buffer::F64(vec![13.0]));
    }

    #[test]
    fn integer_division_by_zero_follows_ub_table() {
        let a = Tensor::from_i32([1], vec![5]).unwrap();
        let b = Tensor::from_i32([1], vec![0]).unwrap();
        let (g, inputs) = single(Op::Div, vec![a, b]);
        let value =
            |p: BackendProfile| output(&execute(&p, &g, &inputs)).data().get_i64(0).unwrap();
        assert_eq!(
            value(BackendProfile::reference()) as i32 as u32,
            4_294_967_295
        );
        assert_eq!(value(BackendProfile::parallel()), 6);
        assert_eq!(value(BackendProfile::relaxed_a()), 0);
    }

    #[test]
    fn infinite_cast_follows_ub_table() {
        let x = Tensor::from_f64([2], vec![f64::INFINITY, 2.5]).unwrap();
        let (g, inputs) = single(Op::Cast { to: DType::I64 }, vec![x]);
        let values = |p: BackendProfile| output(&execute(&p, &g, &inputs)).data().clone();
        use crate::graph::Buffer::I64;
        assert_eq!(values(BackendProfile::reference()), I64(vec![i64::MAX, 2]));
        assert_eq!(
            values(BackendProfile::parallel()),
            I64(vec![-4_294_967_296, 2])
        );
        assert_eq!(values(BackendProfile::relaxed_a()), I64(vec![0, 2]));
    }

    #[test]
    fn reference_relu_and_nan_sum() {
        let x = Tensor::from_f64([1], vec![-3.0]).unwrap();
        let (g, inputs) = single(Op::Relu, vec![x]);
        assert_eq!(
            output(&execute_reference(&g, &inputs)).data().get_f64(0),
            0.0
        );
        let x = Tensor::from_f64([3], vec![1.0, f64::NAN, 2.0]).unwrap();
        let (g, inputs) = single(Op::Sum { axis: None }, vec![x]);
        assert!(output(&execute_reference(&g, &inputs))
            .data()
            .get_f64(0)
            .is_nan());
    }

    #[test]
    fn mismatched_input_is_a_trace_outcome() {
        let g = fixtures::linear_layer();
        let mut inputs = fixtures::linear_layer_inputs();
        inputs[0] = Tensor::from_f64([3], vec![0.0; 3]).unwrap();
        let trace = execute_reference(&g, &inputs);
        assert_eq!(
            trace.outcome(g.inputs()[0]).unwrap().error().unwrap().kind,
            ErrorKind::ShapeMismatch
        );
        let trace = execute_reference(&g, &[]);
        assert_eq!(trace.records.len(), g.len());
    }

    #[test]
    fn digest_ignores_timings() {
        let g = fixtures::linear_layer();
        let mut a = execute_reference(&g, &fixtures::linear_layer_inputs());
        let b = execute_reference(&g, &fixtures::linear_layer_inputs());
        a.records[0].micros += 1000;
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn unpool_write_order_depends_on_seed() {
        let (g, inputs) = fixtures::unpool_duplicate_indices();
        let seq = execute_reference(&g, &inputs);
        assert_eq!(output(&seq).data().get_f64(0), 4.0);
        let outs: std::collections::BTreeSet<u64> = (0..50)
            .map(|seed| {
                let p = BackendProfile {
                    reduction_order: ReductionOrder::SeededPermutation { seed },
                    ..BackendProfile::reference()
                };
                output(&execute(&p, &g, &inputs))
                    .data()
                    .get_f64(0)
                    .to_bits()
            })
            .collect();
        assert!(outs.len() >= 2);
    }
}
