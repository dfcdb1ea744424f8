use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, NodeId, NodeKind, Op, OpKind, PortRef, Tensor};
use crate::rng::Rng;

/// Upper bound given to `HardTanh` when it replaces `Relu`.
pub const HARDTANH_CAP: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MutationRule {
    /// `Add` to `AddInPlace`.
    InPlace,
    /// `Relu` to `HardTanh(0, cap)`.
    ActivationSwap,
    /// `Add(a, b)` to `AddCDiv(a, b, ones, 1)`, floats only.
    Reformulation,
}

impl MutationRule {
    fn applies(self, graph: &Graph, node: NodeId) -> bool {
        let n = graph.node(node).expect("node exists");
        match (self, n.op_kind()) {
            (MutationRule::InPlace, Some(OpKind::Add)) => {
                // Only when the aliased operand has no other reader. A
                // graph input or constant is never overwritten.
                let a = n.inputs[0];
                graph.consumer_count(a) == 1 && graph.node(a.node).is_some_and(|p| p.is_op())
            }
            (MutationRule::ActivationSwap, Some(OpKind::Relu)) => true,
            (MutationRule::Reformulation, Some(OpKind::Add)) => n.spec().dtype.is_float(),
            _ => false,
        }
    }

    fn apply(self, graph: &mut Graph, node: NodeId) {
        match self {
            MutationRule::InPlace => {
                graph.node_mut(node).expect("node exists").kind = NodeKind::Op(Op::AddInPlace);
            }
            MutationRule::ActivationSwap => {
                graph.node_mut(node).expect("node exists").kind = NodeKind::Op(Op::HardTanh {
                    min: 0.0,
                    max: HARDTANH_CAP,
                });
            }
            MutationRule::Reformulation => {
                let spec = graph.node(node).expect("node exists").spec().clone();
                let ones = graph.add_node(
                    NodeKind::Constant(Tensor::full(&spec, 1.0)),
                    vec![],
                    vec![spec],
                );
                let n = graph.node_mut(node).expect("node exists");
                n.kind = NodeKind::Op(Op::AddCDiv { value: 1.0 });
                n.inputs.push(PortRef::from(ones));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationTable {
    pub rules: Vec<MutationRule>,
}

impl Default for MutationTable {
    fn default() -> Self {
        MutationTable {
            rules: vec![
                MutationRule::InPlace,
                MutationRule::ActivationSwap,
                MutationRule::Reformulation,
            ],
        }
    }
}

/// One applied rewrite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub node: NodeId,
    pub rule: MutationRule,
}

/// Rewrites each eligible node with probability `p`, picking uniformly
/// among the rules that apply to it. Nodes are visited in id order and
/// eligibility is checked against the graph as rewritten so far.
pub fn mutate(
    graph: &Graph,
    table: &MutationTable,
    p: f64,
    rng: &mut Rng,
) -> (Graph, Vec<Mutation>) {
    let mut out = graph.clone();
    let mut applied = Vec::new();
    let ids: Vec<NodeId> = graph.nodes().filter(|n| n.is_op()).map(|n| n.id).collect();
    for id in ids {
        let rules: Vec<MutationRule> = table
            .rules
            .iter()
            .copied()
            .filter(|r| r.applies(&out, id))
            .collect();
        if rules.is_empty() || !rng.gen_bool(p.clamp(0.0, 1.0)) {
            continue;
        }
        let rule = rules[rng.gen_range(0..rules.len())];
        rule.apply(&mut out, id);
        applied.push(Mutation { node: id, rule });
    }
    (out, applied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::execute_reference;
    use crate::diff::{compare_tensors, ToleranceConfig};
    use crate::graph::{DType, GraphBuilder, TensorSpec};
    use crate::rng::rng_from_seed;

    fn relu_chain(n: usize) -> Graph {
        let mut b = GraphBuilder::new();
        let mut x = b.input(TensorSpec::new([2], DType::F32));
        for _ in 0..n {
            x = b.op(Op::Relu, &[x]).unwrap();
        }
        b.output(x);
        b.finish().unwrap()
    }

    #[test]
    fn zero_probability_changes_nothing() {
        let g = relu_chain(10);
        let (m, applied) = mutate(&g, &MutationTable::default(), 0.0, &mut rng_from_seed(1));
        assert!(applied.is_empty());
        assert_eq!(m.to_canonical_json(), g.to_canonical_json());
    }

    #[test]
    fn forced_relu_swap() {
        let (m, _) = mutate(
            &relu_chain(1),
            &MutationTable::default(),
            1.0,
            &mut rng_from_seed(1),
        );
        let op = m.nodes().find(|n| n.is_op()).unwrap();
        assert_eq!(op.op_kind(), Some(OpKind::HardTanh));
        m.validate().unwrap();
    }

    #[test]
    fn quarter_probability_mutates_about_a_quarter() {
        let g = relu_chain(1000);
        let (m, applied) = mutate(&g, &MutationTable::default(), 0.25, &mut rng_from_seed(42));
        let frac = applied.len() as f64 / 1000.0;
        assert!((0.20..=0.30).contains(&frac), "{frac}");
        // Counted independently from the graphs themselves.
        let changed = g
            .nodes()
            .filter(|n| m.node(n.id).unwrap().kind != n.kind)
            .count();
        assert_eq!(changed, applied.len());
    }

    #[test]
    fn in_place_needs_a_sole_reader() {
        let mut b = GraphBuilder::new();
        let x = b.input(TensorSpec::new([3], DType::I64));
        let r = b.op(Op::Relu, &[x]).unwrap();
        let shared = b.op(Op::Add, &[r, r]).unwrap();
        let r2 = b.op(Op::Relu, &[shared]).unwrap();
        let single = b.op(Op::Add, &[r2, x]).unwrap();
        b.output(single);
        let g = b.finish().unwrap();
        let table = MutationTable {
            rules: vec![MutationRule::InPlace],
        };
        let (m, applied) = mutate(&g, &table, 1.0, &mut rng_from_seed(0));
        assert_eq!(applied.len(), 1);
        assert_eq!(applied[0].node, single.node);
        assert_eq!(m.node(shared.node).unwrap().op_kind(), Some(OpKind::Add));
    }

    #[test]
    fn reformulation_preserves_values() {
        let mut b = GraphBuilder::new();
        let x = b.input(TensorSpec::new([5], DType::F64));
        let y = b.input(TensorSpec::new([5], DType::F64));
        let s = b.op(Op::Add, &[x, y]).unwrap();
        b.output(s);
        let g = b.finish().unwrap();
        let table = MutationTable {
            rules: vec![MutationRule::Reformulation],
        };
        let (m, applied) = mutate(&g, &table, 1.0, &mut rng_from_seed(0));
        assert_eq!(applied.len(), 1);
        m.validate().unwrap();
        let mut rng = rng_from_seed(9);
        for _ in 0..50 {
            let vals = |rng: &mut Rng| {
                (0..5)
                    .map(|_| rng.gen_range(-10.0..10.0))
                    .collect::<Vec<f64>>()
            };
            let inputs = vec![
                Tensor::from_f64([5], vals(&mut rng)).unwrap(),
                Tensor::from_f64([5], vals(&mut rng)).unwrap(),
            ];
            let before = execute_reference(&g, &inputs);
            let after = execute_reference(&m, &inputs);
            let out = g.outputs()[0];
            let a = after.outcome(out).unwrap().tensor().unwrap();
            let b = before.outcome(out).unwrap().tensor().unwrap();
            assert!(compare_tensors(a, b, &ToleranceConfig::default()).is_equivalent());
        }
    }
}
