//! Random input tensors that respect the graph's index operands.
//!
//! Floats are drawn uniformly from `[0, 1)`. Integer inputs that end up as
//! indices (directly or through reshapes, slices, transposes and integer
//! casts) are drawn from `[0, 4]`, other integers from `[0, 16]`. Values in
//! `[0, 4]` can still be out of bounds for a short axis, on purpose.

mod bundle;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Buffer, DType, Graph, NodeId, NodeKind, OpKind, Tensor, TensorSpec};
use crate::rng::{rng_from_seed, Rng};

pub use bundle::{read_bundle, write_bundle, InputBundle};

#[derive(Debug, Error)]
pub enum InputGenError {
    #[error("input {node}: unsatisfiable constraint: {detail}")]
    UnsatisfiableConstraint { node: NodeId, detail: String },
    #[error("invalid input policy: {0}")]
    InvalidPolicy(String),
    #[error("malformed input bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPolicy {
    /// Half-open `[lo, hi)`.
    pub float_range: (f64, f64),
    /// Inclusive, for inputs used as indices.
    pub index_range: (i64, i64),
    /// Inclusive, for every other integer input.
    pub int_range: (i64, i64),
    pub seed: u64,
}

impl Default for InputPolicy {
    fn default() -> Self {
        InputPolicy {
            float_range: (0.0, 1.0),
            index_range: (0, 4),
            int_range: (0, 16),
            seed: 0,
        }
    }
}

impl InputPolicy {
    pub fn with_seed(seed: u64) -> Self {
        InputPolicy {
            seed,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<(), InputGenError> {
        let (lo, hi) = self.float_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(InputGenError::InvalidPolicy(format!(
                "float range [{lo}, {hi}) is empty or not finite"
            )));
        }
        let (a, b) = self.index_range;
        if a < 0 || a > b {
            return Err(InputGenError::InvalidPolicy(format!(
                "index range [{a}, {b}] must be non-empty and >= 0"
            )));
        }
        let (a, b) = self.int_range;
        if a > b {
            return Err(InputGenError::InvalidPolicy(format!(
                "int range [{a}, {b}] is empty"
            )));
        }
        Ok(())
    }
}

/// Role of an input, from the operand slots it reaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Plain,
    Index,
    /// Bag offsets: sorted, starting at 0.
    Offsets,
}

/// Inputs that reach an index operand through shape-only operators, with
/// the strongest constraint among the slots they reach.
fn index_roles(graph: &Graph) -> BTreeMap<NodeId, Role> {
    let mut roles = BTreeMap::new();
    for node in graph.nodes() {
        let Some(kind) = node.op_kind() else { continue };
        for &slot in kind.index_slots() {
            let role = if kind == OpKind::EmbeddingBag && slot == 2 {
                Role::Offsets
            } else {
                Role::Index
            };
            let mut cur = node.inputs[slot].node;
            loop {
                let producer = graph.node(cur).expect("edges point at nodes");
                match &producer.kind {
                    NodeKind::Input => {
                        let r = roles.entry(cur).or_insert(role);
                        if role == Role::Offsets {
                            *r = Role::Offsets;
                        }
                        break;
                    }
                    NodeKind::Op(op) if op.is_index_transparent() => cur = producer.inputs[0].node,
                    _ => break,
                }
            }
        }
    }
    roles
}

/// Graph inputs whose values end up used as indices.
pub fn classify_index_inputs(graph: &Graph) -> BTreeSet<NodeId> {
    index_roles(graph).into_keys().collect()
}

fn fill(spec: &TensorSpec, role: Role, policy: &InputPolicy, rng: &mut Rng) -> Buffer {
    let n = spec.element_count();
    let ints = |rng: &mut Rng, (lo, hi): (i64, i64)| -> Vec<i64> {
        (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
    };
    let int_range = if role == Role::Plain {
        policy.int_range
    } else {
        policy.index_range
    };
    match spec.dtype {
        // Floats that feed an index slot through an integer cast get whole
        // index values, still in their own dtype.
        DType::F64 if role != Role::Plain => {
            Buffer::F64(ints(rng, int_range).into_iter().map(|v| v as f64).collect())
        }
        DType::F32 if role != Role::Plain => {
            Buffer::F32(ints(rng, int_range).into_iter().map(|v| v as f32).collect())
        }
        DType::F64 => {
            let (lo, hi) = policy.float_range;
            Buffer::F64((0..n).map(|_| rng.gen_range(lo..hi)).collect())
        }
        DType::F32 => {
            let (lo, hi) = (policy.float_range.0 as f32, policy.float_range.1 as f32);
            Buffer::F32((0..n).map(|_| rng.gen_range(lo..hi)).collect())
        }
        DType::I64 => Buffer::I64(ints(rng, int_range)),
        DType::I32 => Buffer::I32(ints(rng, int_range).into_iter().map(|v| v as i32).collect()),
        DType::Bool => Buffer::Bool((0..n).map(|_| rng.gen_bool(0.5)).collect()),
    }
}

/// Sorts in place and pins the first element to zero.
fn apply_offsets(buf: &mut Buffer) {
    fn fix<T: PartialOrd + Copy + Default>(v: &mut [T]) {
        v.sort_by(|a, b| a.partial_cmp(b).expect("offsets are never NaN"));
        v[0] = T::default();
    }
    match buf {
        Buffer::I64(v) => fix(v),
        Buffer::I32(v) => fix(v),
        Buffer::F64(v) => fix(v),
        Buffer::F32(v) => fix(v),
        Buffer::Bool(_) => {}
    }
}

/// One tensor per graph input, in input order. Deterministic in
/// `(graph, policy)`.
pub fn generate_inputs(graph: &Graph, policy: &InputPolicy) -> Result<Vec<Tensor>, InputGenError> {
    policy.check()?;
    let roles = index_roles(graph);
    let mut rng = rng_from_seed(policy.seed);
    let mut out = Vec::with_capacity(graph.inputs().len());
    for &id in graph.inputs() {
        let node = graph.node(id).expect("inputs are nodes");
        let spec = node.spec().clone().with_contiguous(true);
        let role = roles.get(&id).copied().unwrap_or(Role::Plain);
        let mut data = fill(&spec, role, policy, &mut rng);
        if role == Role::Offsets {
            if data.is_empty() || spec.dtype == DType::Bool {
                return Err(InputGenError::UnsatisfiableConstraint {
                    node: id,
                    detail: format!(
                        "bag offsets need a non-empty numeric tensor, got {:?} {}",
                        spec.shape, spec.dtype
                    ),
                });
            }
            apply_offsets(&mut data);
        }
        out.push(Tensor::new(spec, data).expect("generated data matches its spec"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BagMode, GraphBuilder, Op};

    fn single_input(dtype: DType, n: usize) -> Graph {
        let mut b = GraphBuilder::new();
        let x = b.input(TensorSpec::new([n], dtype));
        let y = b.op(Op::Relu, &[x]).unwrap();
        b.output(y);
        b.finish().unwrap()
    }

    #[test]
    fn floats_are_uniform_in_unit_interval() {
        let g = single_input(DType::F64, 1000);
        let t = &generate_inputs(&g, &InputPolicy::with_seed(3)).unwrap()[0];
        let v: Vec<f64> = (0..1000).map(|i| t.data().get_f64(i)).collect();
        assert!(v.iter().all(|x| (0.0..1.0).contains(x)));
        // Uniform[0,1) has sd 0.2887, so the mean of 1000 has sd 0.00913;
        // five of those is 0.0456, inside the [0.45, 0.55] window.
        let mean = v.iter().sum::<f64>() / 1000.0;
        assert!((0.45..=0.55).contains(&mean), "{mean}");
    }

    #[test]
    fn gather_indices_use_the_index_range() {
        let mut b = GraphBuilder::new();
        let data = b.input(TensorSpec::new([3, 8], DType::F32));
        let idx = b.input(TensorSpec::new([3, 50], DType::I64));
        let other = b.input(TensorSpec::new([100], DType::I64));
        let g = b.op(Op::Gather { axis: 1 }, &[data, idx]).unwrap();
        let r = b.op(Op::Relu, &[other]).unwrap();
        b.output(g);
        b.output(r);
        let g = b.finish().unwrap();
        assert_eq!(classify_index_inputs(&g), BTreeSet::from([idx.node]));
        let inputs = generate_inputs(&g, &InputPolicy::with_seed(1)).unwrap();
        assert!((0..150).all(|i| (0..=4).contains(&inputs[1].data().get_i64(i).unwrap())));
        let plain: Vec<i64> = (0..100)
            .map(|i| inputs[2].data().get_i64(i).unwrap())
            .collect();
        assert!(plain.iter().all(|v| (0..=16).contains(v)));
        assert!(plain.iter().any(|&v| v > 4));
    }

    #[test]
    fn offsets_start_at_zero_and_never_decrease() {
        let mut b = GraphBuilder::new();
        let w = b.input(TensorSpec::new([5, 2], DType::F32));
        let i = b.input(TensorSpec::new([6], DType::I64));
        let o = b.input(TensorSpec::new([4], DType::I64));
        let e = b
            .op(Op::EmbeddingBag { mode: BagMode::Sum }, &[w, i, o])
            .unwrap();
        b.output(e);
        let g = b.finish().unwrap();
        for seed in 0..20 {
            let t = &generate_inputs(&g, &InputPolicy::with_seed(seed)).unwrap()[2];
            let v: Vec<i64> = (0..4).map(|k| t.data().get_i64(k).unwrap()).collect();
            assert_eq!(v[0], 0);
            assert!(v.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn empty_offsets_are_unsatisfiable() {
        let mut b = GraphBuilder::new();
        let w = b.input(TensorSpec::new([5, 2], DType::F32));
        let i = b.input(TensorSpec::new([6], DType::I64));
        let o = b.input(TensorSpec::new([0], DType::I64));
        let e = b
            .op(Op::EmbeddingBag { mode: BagMode::Sum }, &[w, i, o])
            .unwrap();
        b.output(e);
        let g = b.finish().unwrap();
        let err = generate_inputs(&g, &InputPolicy::default()).unwrap_err();
        assert!(
            matches!(err, InputGenError::UnsatisfiableConstraint { node, .. } if node == o.node)
        );
    }

    /// Inputs with a path to an index slot, found by exhaustive search over
    /// all paths and checking every intermediate node.
    fn brute_force_index_inputs(g: &Graph) -> BTreeSet<NodeId> {
        fn reaches(
            g: &Graph,
            consumers: &BTreeMap<NodeId, Vec<(NodeId, usize)>>,
            at: NodeId,
        ) -> bool {
            consumers.get(&at).into_iter().flatten().any(|&(c, slot)| {
                let node = g.node(c).unwrap();
                let Some(op) = node.op() else { return false };
                if op.kind().index_slots().contains(&slot) {
                    return true;
                }
                let shape_only = matches!(
                    op,
                    Op::Reshape { .. }
                        | Op::Flatten
                        | Op::Transpose { .. }
                        | Op::Slice { .. }
                        | Op::Contiguous
                ) || matches!(op, Op::Cast { to } if to.is_int());
                shape_only && reaches(g, consumers, c)
            })
        }
        let consumers = g.consumers();
        g.inputs()
            .iter()
            .copied()
            .filter(|&i| reaches(g, &consumers, i))
            .collect()
    }

    #[test]
    fn classification_matches_reachability() {
        let mut b = GraphBuilder::new();
        let table = b.input(TensorSpec::new([6, 3], DType::F64));
        let raw = b.input(TensorSpec::new([2, 2], DType::F64));
        let via_reshape = b.input(TensorSpec::new([2, 2], DType::I32));
        let via_add = b.input(TensorSpec::new([4], DType::I64));
        let flat = b
            .op(Op::Reshape { shape: vec![4] }, &[via_reshape])
            .unwrap();
        let sel = b.op(Op::IndexSelect { axis: 0 }, &[table, flat]).unwrap();
        let bumped = b.op(Op::Add, &[via_add, via_add]).unwrap();
        let sel2 = b.op(Op::IndexSelect { axis: 0 }, &[table, bumped]).unwrap();
        let cast = b.op(Op::Cast { to: DType::I64 }, &[raw]).unwrap();
        let flat2 = b.op(Op::Flatten, &[cast]).unwrap();
        let sel3 = b.op(Op::IndexSelect { axis: 0 }, &[table, flat2]).unwrap();
        for s in [sel, sel2, sel3] {
            b.output(s);
        }
        let g = b.finish().unwrap();
        let got = classify_index_inputs(&g);
        assert_eq!(got, brute_force_index_inputs(&g));
        assert!(got.contains(&via_reshape.node) && got.contains(&raw.node));
        assert!(!got.contains(&via_add.node) && !got.contains(&table.node));
    }

    #[test]
    fn same_policy_same_bits() {
        let g = single_input(DType::F32, 64);
        let a = generate_inputs(&g, &InputPolicy::with_seed(5)).unwrap();
        let b = generate_inputs(&g, &InputPolicy::with_seed(5)).unwrap();
        assert!(a[0].bitwise_eq(&b[0]));
        assert_eq!(a[0].dtype(), DType::F32);
    }
}
