//! The operator set and its per-kind signatures.
//!
//! Every operator produces exactly one output tensor. [`infer_op`] is the
//! single source of truth for arity, dtype constraints and output shapes; it
//! is used statically by validation and again at runtime against the actual
//! input tensors, which is how data-dependent shape mismatches surface.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{DType, TensorSpec};

/// Reduction mode of an embedding bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BagMode {
    Sum,
    Mean,
    Max,
}

/// An operator together with its attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Add,
    /// `Add` whose output aliases the storage of input 0.
    AddInPlace,
    Sub,
    Mul,
    Div,
    Remainder,
    /// `input + value * t1 / t2`.
    AddCDiv {
        value: f64,
    },
    Relu,
    HardTanh {
        min: f64,
        max: f64,
    },
    Sigmoid,
    MatMul,
    /// `beta * bias + alpha * (a @ b)`.
    AddMM {
        beta: f64,
        alpha: f64,
    },
    Reshape {
        shape: Vec<usize>,
    },
    Flatten,
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    /// Constant padding of the last axis.
    Pad {
        before: usize,
        after: usize,
        value: f64,
    },
    Transpose {
        dim0: usize,
        dim1: usize,
    },
    Cast {
        to: DType,
    },
    Contiguous,
    Gather {
        axis: usize,
    },
    IndexSelect {
        axis: usize,
    },
    EmbeddingBag {
        mode: BagMode,
    },
    /// Elementwise `cond ? a : b`.
    Where,
    /// Elements of `data` where `mask` is set, as a 1-D tensor whose length
    /// is only known at runtime.
    NonZeroSelect,
    Sum {
        axis: Option<usize>,
    },
    Mean {
        axis: Option<usize>,
    },
    Max {
        axis: Option<usize>,
    },
    ArgMax {
        axis: Option<usize>,
    },
    /// Inference-mode batch normalization over axis 1:
    /// inputs are `(x, running_mean, running_var, weight, bias)`.
    BatchNorm {
        eps: f64,
    },
    MaxPool1d {
        kernel: usize,
        stride: usize,
    },
    MaxUnpool2d {
        output_size: [usize; 2],
    },
}

/// Attribute-free operator tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Add,
    AddInPlace,
    Sub,
    Mul,
    Div,
    Remainder,
    AddCDiv,
    Relu,
    HardTanh,
    Sigmoid,
    MatMul,
    AddMM,
    Reshape,
    Flatten,
    Slice,
    Pad,
    Transpose,
    Cast,
    Contiguous,
    Gather,
    IndexSelect,
    EmbeddingBag,
    Where,
    NonZeroSelect,
    Sum,
    Mean,
    Max,
    ArgMax,
    BatchNorm,
    MaxPool1d,
    MaxUnpool2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpGroup {
    Elementwise,
    Activation,
    Linear,
    Shape,
    Indexing,
    DataDependent,
    Reduction,
    Normalization,
    Pooling,
}

impl OpKind {
    pub const ALL: [OpKind; 31] = [
        OpKind::Add,
        OpKind::AddInPlace,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Remainder,
        OpKind::AddCDiv,
        OpKind::Relu,
        OpKind::HardTanh,
        OpKind::Sigmoid,
        OpKind::MatMul,
        OpKind::AddMM,
        OpKind::Reshape,
        OpKind::Flatten,
        OpKind::Slice,
        OpKind::Pad,
        OpKind::Transpose,
        OpKind::Cast,
        OpKind::Contiguous,
        OpKind::Gather,
        OpKind::IndexSelect,
        OpKind::EmbeddingBag,
        OpKind::Where,
        OpKind::NonZeroSelect,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Max,
        OpKind::ArgMax,
        OpKind::BatchNorm,
        OpKind::MaxPool1d,
        OpKind::MaxUnpool2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "Add",
            OpKind::AddInPlace => "AddInPlace",
            OpKind::Sub => "Sub",
            OpKind::Mul => "Mul",
            OpKind::Div => "Div",
            OpKind::Remainder => "Remainder",
            OpKind::AddCDiv => "AddCDiv",
            OpKind::Relu => "Relu",
            OpKind::HardTanh => "HardTanh",
            OpKind::Sigmoid => "Sigmoid",
            OpKind::MatMul => "MatMul",
            OpKind::AddMM => "AddMM",
            OpKind::Reshape => "Reshape",
            OpKind::Flatten => "Flatten",
            OpKind::Slice => "Slice",
            OpKind::Pad => "Pad",
            OpKind::Transpose => "Transpose",
            OpKind::Cast => "Cast",
            OpKind::Contiguous => "Contiguous",
            OpKind::Gather => "Gather",
            OpKind::IndexSelect => "IndexSelect",
            OpKind::EmbeddingBag => "EmbeddingBag",
            OpKind::Where => "Where",
            OpKind::NonZeroSelect => "NonZeroSelect",
            OpKind::Sum => "Sum",
            OpKind::Mean => "Mean",
            OpKind::Max => "Max",
            OpKind::ArgMax => "ArgMax",
            OpKind::BatchNorm => "BatchNorm",
            OpKind::MaxPool1d => "MaxPool1d",
            OpKind::MaxUnpool2d => "MaxUnpool2d",
        }
    }

    pub fn group(self) -> OpGroup {
        use OpKind::*;
        match self {
            Add | AddInPlace | Sub | Mul | Div | Remainder | AddCDiv => OpGroup::Elementwise,
            Relu | HardTanh | Sigmoid => OpGroup::Activation,
            MatMul | AddMM => OpGroup::Linear,
            Reshape | Flatten | Slice | Pad | Transpose | Cast | Contiguous => OpGroup::Shape,
            Gather | IndexSelect | EmbeddingBag => OpGroup::Indexing,
            Where | NonZeroSelect => OpGroup::DataDependent,
            Sum | Mean | Max | ArgMax => OpGroup::Reduction,
            BatchNorm => OpGroup::Normalization,
            MaxPool1d | MaxUnpool2d => OpGroup::Pooling,
        }
    }

    pub fn arity(self) -> usize {
        use OpKind::*;
        match self {
            Relu | HardTanh | Sigmoid | Reshape | Flatten | Slice | Pad | Transpose | Cast
            | Contiguous | Sum | Mean | Max | ArgMax | MaxPool1d => 1,
            Add | AddInPlace | Sub | Mul | Div | Remainder | MatMul | Gather | IndexSelect
            | NonZeroSelect | MaxUnpool2d => 2,
            AddCDiv | AddMM | EmbeddingBag | Where => 3,
            BatchNorm => 5,
        }
    }

    /// Input slots that are read as indices into another operand.
    pub fn index_slots(self) -> &'static [usize] {
        match self {
            OpKind::Gather | OpKind::IndexSelect | OpKind::MaxUnpool2d => &[1],
            OpKind::EmbeddingBag => &[1, 2],
            _ => &[],
        }
    }

    /// True when the output extent depends on input values.
    pub fn is_data_dependent_shape(self) -> bool {
        self == OpKind::NonZeroSelect
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown operator kind `{s}`"))
    }
}

/// Why an operator rejected its inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum OpCheckError {
    Arity { expected: usize, actual: usize },
    DType(String),
    Attr(String),
    Shape { expected: String, actual: String },
}

impl fmt::Display for OpCheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpCheckError::Arity { expected, actual } => {
                write!(f, "expected {expected} inputs, got {actual}")
            }
            OpCheckError::DType(msg) => write!(f, "dtype: {msg}"),
            OpCheckError::Attr(msg) => write!(f, "attribute: {msg}"),
            OpCheckError::Shape { expected, actual } => {
                write!(f, "shape: expected {expected}, got {actual}")
            }
        }
    }
}

/// Output spec of one operator application.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InferredSpec {
    pub spec: TensorSpec,
    /// Axis whose extent is only known at runtime; the static extent there
    /// is the one recorded when the graph was built.
    pub dynamic_axis: Option<usize>,
}

impl InferredSpec {
    fn fixed(spec: TensorSpec) -> Self {
        InferredSpec {
            spec,
            dynamic_axis: None,
        }
    }
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Add => OpKind::Add,
            Op::AddInPlace => OpKind::AddInPlace,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Div => OpKind::Div,
            Op::Remainder => OpKind::Remainder,
            Op::AddCDiv { .. } => OpKind::AddCDiv,
            Op::Relu => OpKind::Relu,
            Op::HardTanh { .. } => OpKind::HardTanh,
            Op::Sigmoid => OpKind::Sigmoid,
            Op::MatMul => OpKind::MatMul,
            Op::AddMM { .. } => OpKind::AddMM,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Flatten => OpKind::Flatten,
            Op::Slice { .. } => OpKind::Slice,
            Op::Pad { .. } => OpKind::Pad,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Cast { .. } => OpKind::Cast,
            Op::Contiguous => OpKind::Contiguous,
            Op::Gather { .. } => OpKind::Gather,
            Op::IndexSelect { .. } => OpKind::IndexSelect,
            Op::EmbeddingBag { .. } => OpKind::EmbeddingBag,
            Op::Where => OpKind::Where,
            Op::NonZeroSelect => OpKind::NonZeroSelect,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Max { .. } => OpKind::Max,
            Op::ArgMax { .. } => OpKind::ArgMax,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::MaxPool1d { .. } => OpKind::MaxPool1d,
            Op::MaxUnpool2d { .. } => OpKind::MaxUnpool2d,
        }
    }

    /// Ops whose value semantics only move or reinterpret elements, crossed
    /// when tracing which graph inputs end up used as indices.
    pub fn is_index_transparent(&self) -> bool {
        match self {
            Op::Reshape { .. }
            | Op::Flatten
            | Op::Transpose { .. }
            | Op::Slice { .. }
            | Op::Contiguous => true,
            Op::Cast { to } => to.is_int(),
            _ => false,
        }
    }

    /// Attributes as a JSON object; keys come out sorted.
    pub fn attrs(&self) -> Map<String, Value> {
        let v = match self {
            Op::AddCDiv { value } => json!({ "value": value }),
            Op::HardTanh { min, max } => json!({ "min": min, "max": max }),
            Op::AddMM { beta, alpha } => json!({ "beta": beta, "alpha": alpha }),
            Op::Reshape { shape } => json!({ "shape": shape }),
            Op::Slice { axis, start, end } => json!({ "axis": axis, "start": start, "end": end }),
            Op::Pad {
                before,
                after,
                value,
            } => json!({ "before": before, "after": after, "value": value }),
            Op::Transpose { dim0, dim1 } => json!({ "dim0": dim0, "dim1": dim1 }),
            Op::Cast { to } => json!({ "to": to.name() }),
            Op::Gather { axis } | Op::IndexSelect { axis } => json!({ "axis": axis }),
            Op::EmbeddingBag { mode } => json!({ "mode": mode }),
            Op::Sum { axis } | Op::Mean { axis } | Op::Max { axis } | Op::ArgMax { axis } => {
                json!({ "axis": axis })
            }
            Op::BatchNorm { eps } => json!({ "eps": eps }),
            Op::MaxPool1d { kernel, stride } => json!({ "kernel": kernel, "stride": stride }),
            Op::MaxUnpool2d { output_size } => json!({ "output_size": output_size }),
            _ => json!({}),
        };
        match v {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }

    pub fn from_attrs(kind: OpKind, attrs: &Map<String, Value>) -> Result<Op, String> {
        let a = Attrs(attrs);
        Ok(match kind {
            OpKind::Add => Op::Add,
            OpKind::AddInPlace => Op::AddInPlace,
            OpKind::Sub => Op::Sub,
            OpKind::Mul => Op::Mul,
            OpKind::Div => Op::Div,
            OpKind::Remainder => Op::Remainder,
            OpKind::AddCDiv => Op::AddCDiv {
                value: a.float("value")?,
            },
            OpKind::Relu => Op::Relu,
            OpKind::HardTanh => Op::HardTanh {
                min: a.float("min")?,
                max: a.float("max")?,
            },
            OpKind::Sigmoid => Op::Sigmoid,
            OpKind::MatMul => Op::MatMul,
            OpKind::AddMM => Op::AddMM {
                beta: a.float("beta")?,
                alpha: a.float("alpha")?,
            },
            OpKind::Reshape => Op::Reshape {
                shape: a.parse("shape")?,
            },
            OpKind::Flatten => Op::Flatten,
            OpKind::Slice => Op::Slice {
                axis: a.parse("axis")?,
                start: a.parse("start")?,
                end: a.parse("end")?,
            },
            OpKind::Pad => Op::Pad {
                before: a.parse("before")?,
                after: a.parse("after")?,
                value: a.float("value")?,
            },
            OpKind::Transpose => Op::Transpose {
                dim0: a.parse("dim0")?,
                dim1: a.parse("dim1")?,
            },
            OpKind::Cast => Op::Cast {
                to: a.parse::<String>("to")?.parse()?,
            },
            OpKind::Contiguous => Op::Contiguous,
            OpKind::Gather => Op::Gather {
                axis: a.parse("axis")?,
            },
            OpKind::IndexSelect => Op::IndexSelect {
                axis: a.parse("axis")?,
            },
            OpKind::EmbeddingBag => Op::EmbeddingBag {
                mode: a.parse("mode")?,
            },
            OpKind::Where => Op::Where,
            OpKind::NonZeroSelect => Op::NonZeroSelect,
            OpKind::Sum => Op::Sum {
                axis: a.parse("axis")?,
            },
            OpKind::Mean => Op::Mean {
                axis: a.parse("axis")?,
            },
            OpKind::Max => Op::Max {
                axis: a.parse("axis")?,
            },
            OpKind::ArgMax => Op::ArgMax {
                axis: a.parse("axis")?,
            },
            OpKind::BatchNorm => Op::BatchNorm {
                eps: a.float("eps")?,
            },
            OpKind::MaxPool1d => Op::MaxPool1d {
                kernel: a.parse("kernel")?,
                stride: a.parse("stride")?,
            },
            OpKind::MaxUnpool2d => Op::MaxUnpool2d {
                output_size: a.parse("output_size")?,
            },
        })
    }
}

struct Attrs<'a>(&'a Map<String, Value>);

impl Attrs<'_> {
    fn parse<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T, String> {
        let v = self.0.get(key).cloned().unwrap_or(Value::Null);
        serde_json::from_value(v).map_err(|e| format!("attribute `{key}`: {e}"))
    }

    fn float(&self, key: &str) -> Result<f64, String> {
        let v: f64 = self.parse(key)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("attribute `{key}` must be finite"))
        }
    }
}

fn shape_err(expected: impl fmt::Display, actual: impl fmt::Display) -> OpCheckError {
    OpCheckError::Shape {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}

fn fmt_shape(s: &[usize]) -> String {
    format!("{s:?}")
}

fn require_numeric(spec: &TensorSpec, what: &str) -> Result<(), OpCheckError> {
    if spec.dtype.is_numeric() {
        Ok(())
    } else {
        Err(OpCheckError::DType(format!(
            "{what} must be numeric, got {}",
            spec.dtype
        )))
    }
}

fn require_float(spec: &TensorSpec, what: &str) -> Result<(), OpCheckError> {
    if spec.dtype.is_float() {
        Ok(())
    } else {
        Err(OpCheckError::DType(format!(
            "{what} must be floating point, got {}",
            spec.dtype
        )))
    }
}

fn require_int(spec: &TensorSpec, what: &str) -> Result<(), OpCheckError> {
    if spec.dtype.is_int() {
        Ok(())
    } else {
        Err(OpCheckError::DType(format!(
            "{what} must be an integer tensor, got {}",
            spec.dtype
        )))
    }
}

fn same_dtype(a: &TensorSpec, b: &TensorSpec) -> Result<(), OpCheckError> {
    if a.dtype == b.dtype {
        Ok(())
    } else {
        Err(OpCheckError::DType(format!(
            "operand dtypes differ: {} vs {}",
            a.dtype, b.dtype
        )))
    }
}

fn same_shape(a: &TensorSpec, b: &TensorSpec) -> Result<(), OpCheckError> {
    if a.shape == b.shape {
        Ok(())
    } else {
        Err(shape_err(fmt_shape(&a.shape), fmt_shape(&b.shape)))
    }
}

fn reduce_shape(spec: &TensorSpec, axis: Option<usize>) -> Result<Vec<usize>, OpCheckError> {
    match axis {
        None => Ok(Vec::new()),
        Some(a) if a < spec.rank() => {
            let mut s = spec.shape.clone();
            s.remove(a);
            Ok(s)
        }
        Some(a) => Err(OpCheckError::Attr(format!(
            "axis {a} out of range for rank {}",
            spec.rank()
        ))),
    }
}

/// Output spec of `op` applied to `inputs`.
///
/// `declared` is the output spec recorded on the node, consulted only for
/// the runtime-determined extent of data-dependent operators.
pub fn infer_op(
    op: &Op,
    inputs: &[&TensorSpec],
    declared: Option<&TensorSpec>,
) -> Result<InferredSpec, OpCheckError> {
    let kind = op.kind();
    if inputs.len() != kind.arity() {
        return Err(OpCheckError::Arity {
            expected: kind.arity(),
            actual: inputs.len(),
        });
    }
    let x = inputs[0];
    let out =
        |shape: Vec<usize>, dtype: DType| Ok(InferredSpec::fixed(TensorSpec::new(shape, dtype)));
    match op {
        Op::Add | Op::AddInPlace | Op::Sub | Op::Mul | Op::Div | Op::Remainder => {
            require_numeric(x, "lhs")?;
            same_dtype(x, inputs[1])?;
            same_shape(x, inputs[1])?;
            out(x.shape.clone(), x.dtype)
        }
        Op::AddCDiv { .. } => {
            require_float(x, "input")?;
            for t in &inputs[1..] {
                same_dtype(x, t)?;
                same_shape(x, t)?;
            }
            out(x.shape.clone(), x.dtype)
        }
        Op::Relu => {
            require_numeric(x, "input")?;
            out(x.shape.clone(), x.dtype)
        }
        Op::HardTanh { min, max } => {
            require_numeric(x, "input")?;
            if min > max {
                return Err(OpCheckError::Attr(format!("min {min} > max {max}")));
            }
            out(x.shape.clone(), x.dtype)
        }
        Op::Sigmoid => {
            require_float(x, "input")?;
            out(x.shape.clone(), x.dtype)
        }
        Op::MatMul => {
            let b = inputs[1];
            require_float(x, "lhs")?;
            same_dtype(x, b)?;
            if x.rank() != 2 || b.rank() != 2 {
                return Err(shape_err(
                    "two matrices",
                    format!("ranks {} and {}", x.rank(), b.rank()),
                ));
            }
            if x.shape[1] != b.shape[0] {
                return Err(shape_err(
                    format!("inner extents to agree ({} on lhs)", x.shape[1]),
                    format!("{} on rhs", b.shape[0]),
                ));
            }
            out(vec![x.shape[0], b.shape[1]], x.dtype)
        }
        Op::AddMM { .. } => {
            let (bias, a, b) = (inputs[0], inputs[1], inputs[2]);
            require_float(a, "lhs")?;
            same_dtype(a, b)?;
            same_dtype(a, bias)?;
            if a.rank() != 2 || b.rank() != 2 {
                return Err(shape_err(
                    "two matrices",
                    format!("ranks {} and {}", a.rank(), b.rank()),
                ));
            }
            if a.shape[1] != b.shape[0] {
                return Err(shape_err(
                    format!("inner extents to agree ({} on lhs)", a.shape[1]),
                    format!("{} on rhs", b.shape[0]),
                ));
            }
            let (m, n) = (a.shape[0], b.shape[1]);
            if bias.shape != [n] && bias.shape != [m, n] {
                return Err(shape_err(
                    format!("bias [{n}] or [{m}, {n}]"),
                    fmt_shape(&bias.shape),
                ));
            }
            out(vec![m, n], a.dtype)
        }
        Op::Reshape { shape } => {
            let target = TensorSpec::new(shape.clone(), x.dtype);
            if target.element_count() != x.element_count() {
                return Err(shape_err(
                    format!(
                        "{} elements for {}",
                        target.element_count(),
                        fmt_shape(shape)
                    ),
                    format!("{} elements", x.element_count()),
                ));
            }
            out(shape.clone(), x.dtype)
        }
        Op::Flatten => out(vec![x.element_count()], x.dtype),
        Op::Slice { axis, start, end } => {
            if *axis >= x.rank() {
                return Err(OpCheckError::Attr(format!(
                    "axis {axis} out of range for rank {}",
                    x.rank()
                )));
            }
            if start > end || *end > x.shape[*axis] {
                return Err(shape_err(
                    format!("0 <= start <= end <= {}", x.shape[*axis]),
                    format!("{start}..{end}"),
                ));
            }
            let mut s = x.shape.clone();
            s[*axis] = end - start;
            out(s, x.dtype)
        }
        Op::Pad { before, after, .. } => {
            if x.rank() == 0 {
                return Err(shape_err("rank >= 1", "scalar"));
            }
            let mut s = x.shape.clone();
            let last = s.len() - 1;
            s[last] = s[last].saturating_add(*before).saturating_add(*after);
            out(s, x.dtype)
        }
        Op::Transpose { dim0, dim1 } => {
            if dim0 == dim1 || *dim0 >= x.rank() || *dim1 >= x.rank() {
                return Err(OpCheckError::Attr(format!(
                    "cannot swap axes {dim0} and {dim1} of rank {}",
                    x.rank()
                )));
            }
            let mut s = x.shape.clone();
            s.swap(*dim0, *dim1);
            Ok(InferredSpec::fixed(
                TensorSpec::new(s, x.dtype).with_contiguous(false),
            ))
        }
        Op::Cast { to } => out(x.shape.clone(), *to),
        Op::Contiguous => out(x.shape.clone(), x.dtype),
        Op::Gather { axis } => {
            let index = inputs[1];
            require_int(index, "index")?;
            if *axis >= x.rank() {
                return Err(OpCheckError::Attr(format!(
                    "axis {axis} out of range for rank {}",
                    x.rank()
                )));
            }
            if index.rank() != x.rank() {
                return Err(shape_err(
                    format!("index of rank {}", x.rank()),
                    format!("rank {}", index.rank()),
                ));
            }
            for d in 0..x.rank() {
                if d != *axis && index.shape[d] > x.shape[d] {
                    return Err(shape_err(
                        format!("index extent <= {} on axis {d}", x.shape[d]),
                        index.shape[d],
                    ));
                }
            }
            out(index.shape.clone(), x.dtype)
        }
        Op::IndexSelect { axis } => {
            let index = inputs[1];
            require_int(index, "index")?;
            if *axis >= x.rank() {
                return Err(OpCheckError::Attr(format!(
                    "axis {axis} out of range for rank {}",
                    x.rank()
                )));
            }
            if index.rank() != 1 {
                return Err(shape_err("1-D index", fmt_shape(&index.shape)));
            }
            let mut s = x.shape.clone();
            s[*axis] = index.shape[0];
            out(s, x.dtype)
        }
        Op::EmbeddingBag { .. } => {
            let (indices, offsets) = (inputs[1], inputs[2]);
            require_float(x, "weight")?;
            require_int(indices, "indices")?;
            require_int(offsets, "offsets")?;
            if x.rank() != 2 {
                return Err(shape_err("2-D weight", fmt_shape(&x.shape)));
            }
            if indices.rank() != 1 || offsets.rank() != 1 {
                return Err(shape_err(
                    "1-D indices and offsets",
                    format!(
                        "{} and {}",
                        fmt_shape(&indices.shape),
                        fmt_shape(&offsets.shape)
                    ),
                ));
            }
            out(vec![offsets.shape[0], x.shape[1]], x.dtype)
        }
        Op::Where => {
            let (a, b) = (inputs[1], inputs[2]);
            if x.dtype != DType::Bool {
                return Err(OpCheckError::DType(format!(
                    "condition must be Bool, got {}",
                    x.dtype
                )));
            }
            same_dtype(a, b)?;
            same_shape(x, a)?;
            same_shape(x, b)?;
            out(x.shape.clone(), a.dtype)
        }
        Op::NonZeroSelect => {
            let mask = inputs[1];
            if mask.dtype != DType::Bool {
                return Err(OpCheckError::DType(format!(
                    "mask must be Bool, got {}",
                    mask.dtype
                )));
            }
            same_shape(x, mask)?;
            let count = x.element_count();
            let traced = match declared {
                Some(d) => {
                    if d.rank() != 1 {
                        return Err(shape_err("1-D declared output", fmt_shape(&d.shape)));
                    }
                    d.shape[0]
                }
                None => count / 2,
            };
            if traced > count {
                return Err(shape_err(
                    format!("at most {count} selected elements"),
                    traced,
                ));
            }
            Ok(InferredSpec {
                spec: TensorSpec::new(vec![traced], x.dtype),
                dynamic_axis: Some(0),
            })
        }
        Op::Sum { axis } => {
            require_numeric(x, "input")?;
            out(reduce_shape(x, *axis)?, x.dtype)
        }
        Op::Mean { axis } => {
            require_float(x, "input")?;
            out(reduce_shape(x, *axis)?, x.dtype)
        }
        Op::Max { axis } => {
            require_numeric(x, "input")?;
            if x.element_count() == 0 {
                return Err(shape_err("non-empty input", "0 elements"));
            }
            out(reduce_shape(x, *axis)?, x.dtype)
        }
        Op::ArgMax { axis } => {
            require_numeric(x, "input")?;
            if x.element_count() == 0 {
                return Err(shape_err("non-empty input", "0 elements"));
            }
            out(reduce_shape(x, *axis)?, DType::I64)
        }
        Op::BatchNorm { eps } => {
            require_float(x, "input")?;
            if !(*eps >= 0.0) {
                return Err(OpCheckError::Attr(format!("eps {eps} must be >= 0")));
            }
            if x.rank() < 2 {
                return Err(shape_err("rank >= 2", fmt_shape(&x.shape)));
            }
            let c = x.shape[1];
            for p in &inputs[1..] {
                same_dtype(x, p)?;
                if p.shape != [c] {
                    return Err(shape_err(format!("per-channel [{c}]"), fmt_shape(&p.shape)));
                }
            }
            out(x.shape.clone(), x.dtype)
        }
        Op::MaxPool1d { kernel, stride } => {
            require_numeric(x, "input")?;
            if *kernel == 0 || *stride == 0 {
                return Err(OpCheckError::Attr("kernel and stride must be >= 1".into()));
            }
            let Some(&len) = x.shape.last() else {
                return Err(shape_err("rank >= 1", "scalar"));
            };
            if len < *kernel {
                return Err(shape_err(format!("length >= kernel {kernel}"), len));
            }
            let mut s = x.shape.clone();
            *s.last_mut().unwrap() = (len - kernel) / stride + 1;
            out(s, x.dtype)
        }
        Op::MaxUnpool2d { output_size } => {
            let indices = inputs[1];
            require_numeric(x, "input")?;
            require_int(indices, "indices")?;
            if x.rank() < 2 {
                return Err(shape_err("rank >= 2", fmt_shape(&x.shape)));
            }
            same_shape(x, indices)?;
            let mut s = x.shape[..x.rank() - 2].to_vec();
            s.extend_from_slice(output_size);
            out(s, x.dtype)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(shape: &[usize], dtype: DType) -> TensorSpec {
        TensorSpec::new(shape.to_vec(), dtype)
    }

    #[test]
    fn flatten_collapses_all_axes() {
        let x = spec(&[2, 3], DType::F32);
        let o = infer_op(&Op::Flatten, &[&x], None).unwrap();
        assert_eq!(o.spec.shape, vec![6]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = spec(&[2, 3], DType::F32);
        let b = spec(&[4, 5], DType::F32);
        assert!(matches!(
            infer_op(&Op::MatMul, &[&a, &b], None),
            Err(OpCheckError::Shape { .. })
        ));
    }

    #[test]
    fn pad_extends_last_axis() {
        let x = spec(&[4], DType::F64);
        let op = Op::Pad {
            before: 1,
            after: 1,
            value: 0.0,
        };
        assert_eq!(infer_op(&op, &[&x], None).unwrap().spec.shape, vec![6]);
    }

    #[test]
    fn transpose_marks_output_non_contiguous() {
        let x = spec(&[2, 5], DType::F32);
        let o = infer_op(&Op::Transpose { dim0: 0, dim1: 1 }, &[&x], None).unwrap();
        assert_eq!(o.spec.shape, vec![5, 2]);
        assert!(!o.spec.contiguous);
    }

    #[test]
    fn nonzero_select_is_dynamic_on_one_axis() {
        let x = spec(&[3, 4], DType::F32);
        let m = spec(&[3, 4], DType::Bool);
        let declared = spec(&[5], DType::F32);
        let o = infer_op(&Op::NonZeroSelect, &[&x, &m], Some(&declared)).unwrap();
        assert_eq!(o.spec.shape, vec![5]);
        assert_eq!(o.dynamic_axis, Some(0));
    }

    #[test]
    fn arity_is_checked() {
        let x = spec(&[2], DType::F32);
        assert_eq!(
            infer_op(&Op::Add, &[&x], None),
            Err(OpCheckError::Arity {
                expected: 2,
                actual: 1
            })
        );
    }

    #[test]
    fn attrs_round_trip_for_every_kind() {
        let samples = [
            Op::AddCDiv { value: 0.5 },
            Op::HardTanh { min: 0.0, max: 6.0 },
            Op::AddMM {
                beta: 1.0,
                alpha: 2.0,
            },
            Op::Reshape { shape: vec![2, 3] },
            Op::Slice {
                axis: 1,
                start: 0,
                end: 2,
            },
            Op::Pad {
                before: 0,
                after: 3,
                value: 0.0,
            },
            Op::Transpose { dim0: 0, dim1: 1 },
            Op::Cast { to: DType::I32 },
            Op::Gather { axis: 0 },
            Op::IndexSelect { axis: 1 },
            Op::EmbeddingBag {
                mode: BagMode::Mean,
            },
            Op::Sum { axis: None },
            Op::Mean { axis: Some(1) },
            Op::Max { axis: Some(0) },
            Op::ArgMax { axis: None },
            Op::BatchNorm { eps: 1e-5 },
            Op::MaxPool1d {
                kernel: 2,
                stride: 2,
            },
            Op::MaxUnpool2d {
                output_size: [4, 4],
            },
            Op::Add,
            Op::Where,
        ];
        for op in samples {
            let back = Op::from_attrs(op.kind(), &op.attrs()).unwrap();
            assert_eq!(back, op);
        }
        for kind in OpKind::ALL {
            assert_eq!(kind.name().parse::<OpKind>().unwrap(), kind);
        }
    }
}
