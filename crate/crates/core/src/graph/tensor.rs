//! Tensor metadata and concrete element storage.
//!
//! Element data is always held in logical row-major order. A tensor whose
//! spec is marked non-contiguous additionally carries the stride vector of
//! the physical layout it was produced with (for example by a transpose), so
//! layout-sensitive backends can reject it without the data itself being
//! permuted.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::DType;

/// Largest permitted extent along any single axis.
pub const MAX_EXTENT: usize = i32::MAX as usize;

/// Default cap on the element count of any one tensor.
pub const DEFAULT_ELEMENT_CAP: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("extent {extent} on axis {axis} exceeds {MAX_EXTENT}")]
    ExtentTooLarge { axis: usize, extent: usize },
    #[error("element count {count} exceeds cap {cap}")]
    TooManyElements { count: usize, cap: usize },
    #[error("buffer holds {actual} elements but spec requires {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("buffer dtype {actual} does not match spec dtype {expected}")]
    BufferDType { expected: DType, actual: DType },
    #[error("stride vector {strides:?} is inconsistent with shape {shape:?}")]
    Strides {
        shape: Vec<usize>,
        strides: Vec<usize>,
    },
}

/// Shape, element type and layout of a tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorSpec {
    pub shape: Vec<usize>,
    pub dtype: DType,
    #[serde(default = "default_true")]
    pub contiguous: bool,
}

fn default_true() -> bool {
    true
}

impl TensorSpec {
    pub fn new(shape: impl Into<Vec<usize>>, dtype: DType) -> Self {
        TensorSpec {
            shape: shape.into(),
            dtype,
            contiguous: true,
        }
    }

    pub fn scalar(dtype: DType) -> Self {
        TensorSpec::new(Vec::new(), dtype)
    }

    pub fn with_contiguous(mut self, contiguous: bool) -> Self {
        self.contiguous = contiguous;
        self
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Product of extents; an empty shape is a scalar with one element.
    /// Saturates instead of overflowing so oversized specs are rejected by
    /// [`TensorSpec::check`] rather than wrapping.
    pub fn element_count(&self) -> usize {
        self.shape
            .iter()
            .fold(1usize, |acc, &e| acc.saturating_mul(e))
    }

    pub fn check(&self, element_cap: usize) -> Result<(), SpecError> {
        for (axis, &extent) in self.shape.iter().enumerate() {
            if extent > MAX_EXTENT {
                return Err(SpecError::ExtentTooLarge { axis, extent });
            }
        }
        let count = self.element_count();
        if count > element_cap {
            return Err(SpecError::TooManyElements {
                count,
                cap: element_cap,
            });
        }
        Ok(())
    }

    /// Same shape and dtype, ignoring the layout flag.
    pub fn same_value_type(&self, other: &TensorSpec) -> bool {
        self.shape == other.shape && self.dtype == other.dtype
    }
}

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1].saturating_mul(shape[i + 1].max(1));
    }
    strides
}

/// True when `strides` describe a dense layout of `shape` with the axes
/// stored in some permuted order, as produced by transposing a row-major
/// tensor.
fn is_dense_permutation(shape: &[usize], strides: &[usize]) -> bool {
    if shape.contains(&0) {
        return true;
    }
    // Unit axes are never stepped along, so their stride is free.
    let mut axes: Vec<usize> = (0..shape.len()).filter(|&a| shape[a] > 1).collect();
    axes.sort_by(|&a, &b| strides[b].cmp(&strides[a]).then(a.cmp(&b)));
    let mut expect = 1usize;
    for &ax in axes.iter().rev() {
        if strides[ax] != expect {
            return false;
        }
        expect = expect.saturating_mul(shape[ax].max(1));
    }
    true
}

/// Flat element storage, one variant per [`DType`].
#[derive(Debug, Clone, PartialEq)]
pub enum Buffer {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I64(Vec<i64>),
    I32(Vec<i32>),
    Bool(Vec<bool>),
}

impl Buffer {
    pub fn zeros(dtype: DType, len: usize) -> Buffer {
        match dtype {
            DType::F64 => Buffer::F64(vec![0.0; len]),
            DType::F32 => Buffer::F32(vec![0.0; len]),
            DType::I64 => Buffer::I64(vec![0; len]),
            DType::I32 => Buffer::I32(vec![0; len]),
            DType::Bool => Buffer::Bool(vec![false; len]),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Buffer::F64(_) => DType::F64,
            Buffer::F32(_) => DType::F32,
            Buffer::I64(_) => DType::I64,
            Buffer::I32(_) => DType::I32,
            Buffer::Bool(_) => DType::Bool,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Buffer::F64(v) => v.len(),
            Buffer::F32(v) => v.len(),
            Buffer::I64(v) => v.len(),
            Buffer::I32(v) => v.len(),
            Buffer::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element `i` widened to `f64` (integers may lose precision past 2^53).
    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            Buffer::F64(v) => v[i],
            Buffer::F32(v) => v[i] as f64,
            Buffer::I64(v) => v[i] as f64,
            Buffer::I32(v) => v[i] as f64,
            Buffer::Bool(v) => u8::from(v[i]) as f64,
        }
    }

    /// Element `i` as an integer, for integer and bool buffers only.
    pub fn get_i64(&self, i: usize) -> Option<i64> {
        match self {
            Buffer::I64(v) => Some(v[i]),
            Buffer::I32(v) => Some(v[i] as i64),
            Buffer::Bool(v) => Some(i64::from(v[i])),
            _ => None,
        }
    }

    /// Gathers the elements at `indices` into a new buffer of the same dtype.
    pub fn select(&self, indices: &[usize]) -> Buffer {
        fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
            idx.iter().map(|&i| v[i]).collect()
        }
        match self {
            Buffer::F64(v) => Buffer::F64(pick(v, indices)),
            Buffer::F32(v) => Buffer::F32(pick(v, indices)),
            Buffer::I64(v) => Buffer::I64(pick(v, indices)),
            Buffer::I32(v) => Buffer::I32(pick(v, indices)),
            Buffer::Bool(v) => Buffer::Bool(pick(v, indices)),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.dtype().size_bytes());
        match self {
            Buffer::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Buffer::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Buffer::I64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Buffer::I32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Buffer::Bool(v) => v.iter().for_each(|&x| out.push(u8::from(x))),
        }
        out
    }

    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Result<Buffer, String> {
        let width = dtype.size_bytes();
        if !bytes.len().is_multiple_of(width) {
            return Err(format!(
                "{} payload bytes is not a multiple of {width}",
                bytes.len()
            ));
        }
        let chunks = bytes.chunks_exact(width);
        Ok(match dtype {
            DType::F64 => Buffer::F64(
                chunks
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F32 => Buffer::F32(
                chunks
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I64 => Buffer::I64(
                chunks
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I32 => Buffer::I32(
                chunks
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::Bool => {
                let mut v = Vec::with_capacity(bytes.len());
                for &b in bytes {
                    match b {
                        0 => v.push(false),
                        1 => v.push(true),
                        other => return Err(format!("invalid bool byte {other}")),
                    }
                }
                Buffer::Bool(v)
            }
        })
    }

    /// Bitwise equality; unlike `PartialEq`, NaN payloads compare equal to
    /// themselves.
    pub fn bitwise_eq(&self, other: &Buffer) -> bool {
        match (self, other) {
            (Buffer::F64(a), Buffer::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Buffer::F32(a), Buffer::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => self == other,
        }
    }
}

/// A concrete tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    spec: TensorSpec,
    strides: Vec<usize>,
    data: Buffer,
}

impl Tensor {
    /// Contiguous tensor from a spec and a row-major buffer.
    pub fn new(spec: TensorSpec, data: Buffer) -> Result<Tensor, SpecError> {
        let strides = row_major_strides(&spec.shape);
        let spec = TensorSpec {
            contiguous: true,
            ..spec
        };
        Tensor::with_strides(spec, strides, data)
    }

    pub fn with_strides(
        spec: TensorSpec,
        strides: Vec<usize>,
        data: Buffer,
    ) -> Result<Tensor, SpecError> {
        if data.dtype() != spec.dtype {
            return Err(SpecError::BufferDType {
                expected: spec.dtype,
                actual: data.dtype(),
            });
        }
        if data.len() != spec.element_count() {
            return Err(SpecError::BufferLength {
                expected: spec.element_count(),
                actual: data.len(),
            });
        }
        let consistent = strides.len() == spec.rank()
            && if spec.contiguous {
                strides == row_major_strides(&spec.shape)
            } else {
                is_dense_permutation(&spec.shape, &strides)
            };
        if !consistent {
            return Err(SpecError::Strides {
                shape: spec.shape,
                strides,
            });
        }
        Ok(Tensor {
            spec,
            strides,
            data,
        })
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, values: Vec<f64>) -> Result<Tensor, SpecError> {
        Tensor::new(TensorSpec::new(shape, DType::F64), Buffer::F64(values))
    }

    pub fn from_f32(shape: impl Into<Vec<usize>>, values: Vec<f32>) -> Result<Tensor, SpecError> {
        Tensor::new(TensorSpec::new(shape, DType::F32), Buffer::F32(values))
    }

    pub fn from_i64(shape: impl Into<Vec<usize>>, values: Vec<i64>) -> Result<Tensor, SpecError> {
        Tensor::new(TensorSpec::new(shape, DType::I64), Buffer::I64(values))
    }

    pub fn from_i32(shape: impl Into<Vec<usize>>, values: Vec<i32>) -> Result<Tensor, SpecError> {
        Tensor::new(TensorSpec::new(shape, DType::I32), Buffer::I32(values))
    }

    pub fn from_bool(shape: impl Into<Vec<usize>>, values: Vec<bool>) -> Result<Tensor, SpecError> {
        Tensor::new(TensorSpec::new(shape, DType::Bool), Buffer::Bool(values))
    }

    /// A tensor of the given spec filled with `value` (cast to the dtype).
    pub fn full(spec: &TensorSpec, value: f64) -> Tensor {
        let n = spec.element_count();
        let data = match spec.dtype {
            DType::F64 => Buffer::F64(vec![value; n]),
            DType::F32 => Buffer::F32(vec![value as f32; n]),
            DType::I64 => Buffer::I64(vec![value as i64; n]),
            DType::I32 => Buffer::I32(vec![value as i32; n]),
            DType::Bool => Buffer::Bool(vec![value != 0.0; n]),
        };
        Tensor::new(spec.clone(), data).expect("full tensor matches its spec")
    }

    pub fn zeros(spec: &TensorSpec) -> Tensor {
        Tensor::full(spec, 0.0)
    }

    pub fn spec(&self) -> &TensorSpec {
        &self.spec
    }

    pub fn shape(&self) -> &[usize] {
        &self.spec.shape
    }

    pub fn dtype(&self) -> DType {
        self.spec.dtype
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn data(&self) -> &Buffer {
        &self.data
    }

    pub fn into_data(self) -> Buffer {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_contiguous(&self) -> bool {
        self.spec.contiguous
    }

    /// Same values, row-major layout.
    pub fn to_contiguous(&self) -> Tensor {
        Tensor::new(self.spec.clone(), self.data.clone()).expect("same spec and data")
    }

    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.spec == other.spec && self.data.bitwise_eq(&other.data)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    spec: TensorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    strides: Option<Vec<usize>>,
    /// Little-endian element bytes, hex encoded.
    data: String,
}

impl Serialize for Tensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TensorRecord {
            spec: self.spec.clone(),
            strides: (!self.spec.contiguous).then(|| self.strides.clone()),
            data: hex::encode(self.data.to_le_bytes()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let rec = TensorRecord::deserialize(deserializer)?;
        let bytes = hex::decode(&rec.data).map_err(D::Error::custom)?;
        let data = Buffer::from_le_bytes(rec.spec.dtype, &bytes).map_err(D::Error::custom)?;
        let strides = rec
            .strides
            .unwrap_or_else(|| row_major_strides(&rec.spec.shape));
        Tensor::with_strides(rec.spec, strides, data).map_err(D::Error::custom)
    }
}
