//! Declarative backend profiles.
//!
//! A profile is plain data: which operators and dtypes a backend rejects, how
//! it treats out-of-range indices and exceptional values, what it returns for
//! arithmetic that has no defined result, and in which order it reduces.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DType, Graph, NodeKind, OpKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundsPolicy {
    /// Out-of-range indices fail the node.
    Strict,
    /// Indices are reduced modulo the axis extent.
    UncheckedWrap,
    /// Indices are clamped into the axis.
    UncheckedClamp,
}

/// Rewrite applied to the floating-point output of one operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExceptionalRule {
    Propagate,
    NanToZero,
    /// NaN becomes the mean of its flat-index neighbours; edge elements use
    /// their single neighbour.
    NanInterpolate,
    /// NaN becomes +Inf and infinities become NaN.
    InfNanSwap,
}

/// Result of integer division or remainder by zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule")]
pub enum IntDivRule {
    /// A fixed value, truncated to the operand width.
    Constant { value: i64 },
    /// The dividend plus one.
    DividendPlusOne,
    /// The node fails with a numeric fault.
    Error,
}

/// Result of casting a non-finite float to an integer type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule")]
pub enum InfCastRule {
    /// +Inf gives the largest value of the target type, -Inf and NaN the
    /// smallest.
    Saturate,
    /// Every non-finite value becomes this constant, truncated to the target
    /// width.
    Constant {
        value: i64,
    },
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UbTable {
    pub int_div_by_zero: IntDivRule,
    pub inf_to_int_cast: InfCastRule,
}

impl UbTable {
    pub fn nvidia_like() -> Self {
        UbTable {
            int_div_by_zero: IntDivRule::Constant {
                value: 4_294_967_295,
            },
            inf_to_int_cast: InfCastRule::Saturate,
        }
    }

    pub fn amd_like() -> Self {
        UbTable {
            int_div_by_zero: IntDivRule::DividendPlusOne,
            inf_to_int_cast: InfCastRule::Constant {
                value: -4_294_967_296,
            },
        }
    }

    pub fn mac_like() -> Self {
        UbTable {
            int_div_by_zero: IntDivRule::Constant { value: 0 },
            inf_to_int_cast: InfCastRule::Constant { value: 0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "order")]
pub enum ReductionOrder {
    /// Left to right in flat index order.
    Sequential,
    /// Sequential within chunks of `chunk` elements, then a balanced
    /// pairwise tree over the chunk partials.
    FixedTreeChunked { chunk: usize },
    /// A permutation drawn per node from `seed`; also fixes the write order of
    /// scatter-style operators.
    SeededPermutation { seed: u64 },
}

/// A deliberate kernel defect, used to seed divergences at known operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flaw")]
pub enum Flaw {
    /// Adds `delta` to every finite float element (rounded for integers,
    /// negation for booleans); non-finite elements become zero.
    Offset { delta: f64 },
    /// Padding wider than `threshold` in total overwrites every element at
    /// row position `threshold` or beyond with the pad value.
    PadOverflow { threshold: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    #[serde(default)]
    pub unsupported_ops: BTreeSet<OpKind>,
    #[serde(default)]
    pub unsupported_dtypes: BTreeMap<OpKind, BTreeSet<DType>>,
    pub bounds_policy: BoundsPolicy,
    /// Rules for operators not listed here default to `Propagate`.
    #[serde(default)]
    pub exceptional_policy: BTreeMap<OpKind, ExceptionalRule>,
    pub ub_table: UbTable,
    pub reduction_order: ReductionOrder,
    pub accumulation_dtype: DType,
    #[serde(default)]
    pub contiguity_required_ops: BTreeSet<OpKind>,
    /// Operators the backend executes eagerly but cannot compile.
    #[serde(default)]
    pub compile_unsupported_ops: BTreeSet<OpKind>,
    #[serde(default)]
    pub flawed_ops: BTreeMap<OpKind, Flaw>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("unknown backend `{0}`")]
    Unknown(String),
    #[error("profile {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("profile `{name}`: {detail}")]
    Invalid { name: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Names of the profiles that ship with the crate.
pub const BUILTIN_PROFILES: [&str; 4] = ["reference", "parallel", "relaxed-a", "relaxed-b"];

/// Operators that carry floating-point compute and are rejected on F64 by
/// the `relaxed-b` profile.
const F64_REJECTING: [OpKind; 14] = [
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Div,
    OpKind::Remainder,
    OpKind::Relu,
    OpKind::HardTanh,
    OpKind::Sigmoid,
    OpKind::MatMul,
    OpKind::AddMM,
    OpKind::Sum,
    OpKind::Mean,
    OpKind::BatchNorm,
    OpKind::MaxPool1d,
];

impl BackendProfile {
    /// The baseline: strict bounds, IEEE propagation, sequential F64
    /// accumulation, nothing unsupported.
    pub fn reference() -> Self {
        BackendProfile {
            name: "reference".into(),
            unsupported_ops: BTreeSet::new(),
            unsupported_dtypes: BTreeMap::new(),
            bounds_policy: BoundsPolicy::Strict,
            exceptional_policy: BTreeMap::new(),
            ub_table: UbTable::nvidia_like(),
            reduction_order: ReductionOrder::Sequential,
            accumulation_dtype: DType::F64,
            contiguity_required_ops: BTreeSet::new(),
            compile_unsupported_ops: BTreeSet::new(),
            flawed_ops: BTreeMap::new(),
        }
    }

    /// Chunked tree reductions with F32 accumulators.
    pub fn parallel() -> Self {
        BackendProfile {
            name: "parallel".into(),
            exceptional_policy: BTreeMap::from([
                (OpKind::BatchNorm, ExceptionalRule::NanInterpolate),
                (OpKind::Remainder, ExceptionalRule::InfNanSwap),
            ]),
            ub_table: UbTable::amd_like(),
            reduction_order: ReductionOrder::FixedTreeChunked { chunk: 64 },
            accumulation_dtype: DType::F32,
            ..BackendProfile::reference()
        }
    }

    /// Unchecked indexing, NaN-dropping reshape, faulty wide padding.
    pub fn relaxed_a() -> Self {
        BackendProfile {
            name: "relaxed-a".into(),
            bounds_policy: BoundsPolicy::UncheckedWrap,
            exceptional_policy: BTreeMap::from([(OpKind::Reshape, ExceptionalRule::NanToZero)]),
            ub_table: UbTable::mac_like(),
            flawed_ops: BTreeMap::from([(OpKind::Pad, Flaw::PadOverflow { threshold: 65_536 })]),
            ..BackendProfile::reference()
        }
    }

    /// Narrow operator and dtype coverage with layout restrictions.
    pub fn relaxed_b() -> Self {
        let f64_only: BTreeSet<DType> = [DType::F64].into();
        BackendProfile {
            name: "relaxed-b".into(),
            unsupported_ops: [OpKind::EmbeddingBag, OpKind::AddCDiv, OpKind::MaxUnpool2d].into(),
            unsupported_dtypes: F64_REJECTING
                .iter()
                .map(|&k| (k, f64_only.clone()))
                .collect(),
            contiguity_required_ops: [
                OpKind::MatMul,
                OpKind::AddMM,
                OpKind::Gather,
                OpKind::IndexSelect,
                OpKind::MaxPool1d,
            ]
            .into(),
            compile_unsupported_ops: [OpKind::NonZeroSelect, OpKind::Where].into(),
            ..BackendProfile::reference()
        }
    }

    pub fn builtin(name: &str) -> Result<Self, ProfileError> {
        match name {
            "reference" => Ok(BackendProfile::reference()),
            "parallel" => Ok(BackendProfile::parallel()),
            "relaxed-a" => Ok(BackendProfile::relaxed_a()),
            "relaxed-b" => Ok(BackendProfile::relaxed_b()),
            other => Err(ProfileError::Unknown(other.to_string())),
        }
    }

    /// A builtin name, or else a path to a profile JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self, ProfileError> {
        match BackendProfile::builtin(name_or_path) {
            Ok(p) => Ok(p),
            Err(_) if Path::new(name_or_path).exists() => {
                BackendProfile::load(Path::new(name_or_path))
            }
            Err(e) => Err(e),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path)?;
        let profile: BackendProfile =
            serde_json::from_str(&text).map_err(|e| ProfileError::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        profile.check()?;
        Ok(profile)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("profiles serialize")
    }

    pub fn check(&self) -> Result<(), ProfileError> {
        let invalid = |detail: &str| ProfileError::Invalid {
            name: self.name.clone(),
            detail: detail.to_string(),
        };
        if !self.accumulation_dtype.is_float() {
            return Err(invalid("accumulation dtype must be F64 or F32"));
        }
        if let ReductionOrder::FixedTreeChunked { chunk: 0 } = self.reduction_order {
            return Err(invalid("chunk size must be >= 1"));
        }
        Ok(())
    }

    pub fn exceptional_rule(&self, kind: OpKind) -> ExceptionalRule {
        self.exceptional_policy
            .get(&kind)
            .copied()
            .unwrap_or(ExceptionalRule::Propagate)
    }

    /// Why this backend cannot run `node` at all, judged from the graph alone.
    pub fn static_rejection(&self, graph: &Graph, node: crate::graph::NodeId) -> Option<String> {
        let n = graph.node(node)?;
        let NodeKind::Op(op) = &n.kind else {
            return None;
        };
        let kind = op.kind();
        if self.unsupported_ops.contains(&kind) {
            return Some(format!("{kind} is not implemented on {}", self.name));
        }
        let input_specs = n.inputs.iter().filter_map(|p| graph.port_spec(*p));
        if let Some(excluded) = self.unsupported_dtypes.get(&kind) {
            if let Some(spec) = input_specs
                .clone()
                .chain(n.outputs.iter())
                .find(|s| excluded.contains(&s.dtype))
            {
                return Some(format!(
                    "{kind} does not accept {} tensors on {}",
                    spec.dtype, self.name
                ));
            }
        }
        if self.contiguity_required_ops.contains(&kind) {
            if let Some(slot) = input_specs.clone().position(|s| !s.contiguous) {
                return Some(format!(
                    "{kind} requires a contiguous input {slot} on {}",
                    self.name
                ));
            }
        }
        None
    }
}
