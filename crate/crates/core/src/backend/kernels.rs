//! Operator kernels parameterized by a backend profile.
//!
//! Kernels receive inputs whose specs have already been checked against the
//! operator signature, so shape errors here are unreachable; what remains are
//! the data-dependent failures (indices, undefined arithmetic).

use super::profile::{
    BackendProfile, BoundsPolicy, ExceptionalRule, Flaw, InfCastRule, IntDivRule,
};
use super::reduce::Reducer;
use super::trace::NodeError;
use crate::graph::{row_major_strides, BagMode, Buffer, DType, NodeId, Op, Tensor, TensorSpec};

/// Element values widened to one of three working types.
enum Vals {
    F(Vec<f64>),
    I(Vec<i64>),
    B(Vec<bool>),
}

fn vals(t: &Tensor) -> Vals {
    match t.data() {
        Buffer::F64(v) => Vals::F(v.clone()),
        Buffer::F32(v) => Vals::F(v.iter().map(|&x| f64::from(x)).collect()),
        Buffer::I64(v) => Vals::I(v.clone()),
        Buffer::I32(v) => Vals::I(v.iter().map(|&x| i64::from(x)).collect()),
        Buffer::Bool(v) => Vals::B(v.clone()),
    }
}

fn f64s(t: &Tensor) -> Vec<f64> {
    (0..t.len()).map(|i| t.data().get_f64(i)).collect()
}

fn i64s(t: &Tensor) -> Vec<i64> {
    (0..t.len())
        .map(|i| t.data().get_i64(i).unwrap_or(0))
        .collect()
}

fn bools(t: &Tensor) -> Vec<bool> {
    match t.data() {
        Buffer::Bool(v) => v.clone(),
        other => (0..other.len()).map(|i| other.get_f64(i) != 0.0).collect(),
    }
}

fn floats_to(dtype: DType, v: Vec<f64>) -> Buffer {
    match dtype {
        DType::F64 => Buffer::F64(v),
        DType::F32 => Buffer::F32(v.into_iter().map(|x| x as f32).collect()),
        DType::I64 => Buffer::I64(v.into_iter().map(|x| x as i64).collect()),
        DType::I32 => Buffer::I32(v.into_iter().map(|x| x as i32).collect()),
        DType::Bool => Buffer::Bool(v.into_iter().map(|x| x != 0.0).collect()),
    }
}

/// Integers are truncated to the width of `dtype`, which makes I32
/// arithmetic wrap.
fn ints_to(dtype: DType, v: Vec<i64>) -> Buffer {
    match dtype {
        DType::I64 => Buffer::I64(v),
        DType::I32 => Buffer::I32(v.into_iter().map(|x| x as i32).collect()),
        DType::F64 => Buffer::F64(v.into_iter().map(|x| x as f64).collect()),
        DType::F32 => Buffer::F32(v.into_iter().map(|x| x as f32).collect()),
        DType::Bool => Buffer::Bool(v.into_iter().map(|x| x != 0).collect()),
    }
}

fn build(shape: Vec<usize>, dtype: DType, data: Buffer) -> Tensor {
    Tensor::new(TensorSpec::new(shape, dtype), data).expect("kernel output matches its spec")
}

fn build_vals(shape: Vec<usize>, dtype: DType, v: Vals) -> Tensor {
    let data = match v {
        Vals::F(v) => floats_to(dtype, v),
        Vals::I(v) => ints_to(dtype, v),
        Vals::B(v) => Buffer::Bool(v),
    };
    build(shape, dtype, data)
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Evaluation context for one node on one backend.
pub struct Kernel<'a> {
    pub profile: &'a BackendProfile,
    pub node: NodeId,
}

impl Kernel<'_> {
    fn reducer(&self) -> Reducer {
        Reducer::new(
            self.profile.reduction_order,
            self.profile.accumulation_dtype,
            u64::from(self.node.0),
        )
    }

    fn index(&self, raw: i64, extent: usize, what: &str) -> Result<usize, NodeError> {
        let oob =
            || NodeError::out_of_bounds(format!("{what} {raw} out of range for extent {extent}"));
        match self.profile.bounds_policy {
            BoundsPolicy::Strict => {
                if raw >= 0 && (raw as u64) < extent as u64 {
                    Ok(raw as usize)
                } else {
                    Err(oob())
                }
            }
            _ if extent == 0 => Err(oob()),
            BoundsPolicy::UncheckedWrap => Ok(raw.rem_euclid(extent as i64) as usize),
            BoundsPolicy::UncheckedClamp => Ok(raw.clamp(0, extent as i64 - 1) as usize),
        }
    }

    fn div_by_zero(&self, dividend: i64) -> Result<i64, NodeError> {
        match self.profile.ub_table.int_div_by_zero {
            IntDivRule::Constant { value } => Ok(value),
            IntDivRule::DividendPlusOne => Ok(dividend.wrapping_add(1)),
            IntDivRule::Error => Err(NodeError::numeric("integer division by zero")),
        }
    }

    fn cast_non_finite(&self, x: f64, to: DType) -> Result<i64, NodeError> {
        let (min, max) = match to {
            DType::I32 => (i64::from(i32::MIN), i64::from(i32::MAX)),
            _ => (i64::MIN, i64::MAX),
        };
        match self.profile.ub_table.inf_to_int_cast {
            InfCastRule::Saturate => Ok(if x == f64::INFINITY { max } else { min }),
            InfCastRule::Constant { value } => Ok(value),
            InfCastRule::Error => Err(NodeError::numeric(format!("cannot cast {x} to {to}"))),
        }
    }

    /// Runs `op` on `inputs`; `out` is the output spec the runtime check
    /// derived from the actual inputs.
    pub fn eval(&self, op: &Op, inputs: &[&Tensor], out: &TensorSpec) -> Result<Tensor, NodeError> {
        let x = inputs[0];
        let shape = out.shape.clone();
        let dtype = out.dtype;
        let t = match op {
            Op::Add | Op::AddInPlace | Op::Sub | Op::Mul | Op::Div | Op::Remainder => {
                self.binary(op, x, inputs[1], shape, dtype)?
            }
            Op::AddCDiv { value } => {
                let (a, b, c) = (f64s(x), f64s(inputs[1]), f64s(inputs[2]));
                let v = (0..a.len()).map(|i| a[i] + value * b[i] / c[i]).collect();
                build(shape, dtype, floats_to(dtype, v))
            }
            Op::Relu => unary(
                x,
                shape,
                dtype,
                |v| if v < 0.0 { 0.0 } else { v },
                |v| v.max(0),
            ),
            Op::HardTanh { min, max } => {
                let (lo, hi) = (*min, *max);
                unary(
                    x,
                    shape,
                    dtype,
                    |v| v.clamp(lo, hi),
                    |v| (v as f64).clamp(lo, hi) as i64,
                )
            }
            Op::Sigmoid => unary(x, shape, dtype, |v| 1.0 / (1.0 + (-v).exp()), |v| v),
            Op::MatMul => self.matmul(None, x, inputs[1], 1.0, 0.0, shape, dtype),
            Op::AddMM { beta, alpha } => {
                self.matmul(Some(x), inputs[1], inputs[2], *alpha, *beta, shape, dtype)
            }
            Op::Reshape { .. } | Op::Flatten | Op::Contiguous => {
                build(shape, dtype, x.data().clone())
            }
            Op::Slice { axis, start, end } => {
                let (outer, extent, inner) = split_axis(x.shape(), *axis);
                let mut idx = Vec::with_capacity(out.element_count());
                for o in 0..outer {
                    for j in *start..*end {
                        let base = (o * extent + j) * inner;
                        idx.extend(base..base + inner);
                    }
                }
                build(shape, dtype, x.data().select(&idx))
            }
            Op::Pad {
                before,
                after,
                value,
            } => self.pad(x, *before, *after, *value, shape, dtype),
            Op::Transpose { dim0, dim1 } => transpose(x, *dim0, *dim1),
            Op::Cast { to } => self.cast(x, *to, shape)?,
            Op::Gather { axis } => self.gather(x, inputs[1], *axis, shape, dtype)?,
            Op::IndexSelect { axis } => {
                let index = i64s(inputs[1]);
                let (outer, extent, inner) = split_axis(x.shape(), *axis);
                let resolved = index
                    .iter()
                    .map(|&r| self.index(r, extent, "index"))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut idx = Vec::with_capacity(out.element_count());
                for o in 0..outer {
                    for &j in &resolved {
                        let base = (o * extent + j) * inner;
                        idx.extend(base..base + inner);
                    }
                }
                build(shape, dtype, x.data().select(&idx))
            }
            Op::EmbeddingBag { mode } => {
                self.embedding_bag(x, inputs[1], inputs[2], *mode, shape, dtype)?
            }
            Op::Where => {
                let c = bools(x);
                let pick: Vec<usize> = c
                    .iter()
                    .enumerate()
                    .map(|(i, &on)| if on { i } else { i + c.len() })
                    .collect();
                let both = concat(inputs[1].data(), inputs[2].data());
                build(shape, dtype, both.select(&pick))
            }
            Op::NonZeroSelect => {
                let m = bools(inputs[1]);
                let idx: Vec<usize> = m
                    .iter()
                    .enumerate()
                    .filter(|(_, &on)| on)
                    .map(|(i, _)| i)
                    .collect();
                build(vec![idx.len()], dtype, x.data().select(&idx))
            }
            Op::Sum { axis } => self.reduce(x, *axis, shape, dtype, Reduction::Sum),
            Op::Mean { axis } => self.reduce(x, *axis, shape, dtype, Reduction::Mean),
            Op::Max { axis } => self.reduce(x, *axis, shape, dtype, Reduction::Max),
            Op::ArgMax { axis } => self.reduce(x, *axis, shape, dtype, Reduction::ArgMax),
            Op::BatchNorm { eps } => {
                let xs = f64s(x);
                let [m, var, w, b] = [1, 2, 3, 4].map(|i| f64s(inputs[i]));
                let c = x.shape()[1];
                let inner: usize = x.shape()[2..].iter().product();
                let v = xs
                    .iter()
                    .enumerate()
                    .map(|(i, &xi)| {
                        let ch = (i / inner.max(1)) % c.max(1);
                        (xi - m[ch]) / (var[ch] + eps).sqrt() * w[ch] + b[ch]
                    })
                    .collect();
                build(shape, dtype, floats_to(dtype, v))
            }
            Op::MaxPool1d { kernel, stride } => {
                let len = *x.shape().last().unwrap();
                let out_len = *shape.last().unwrap();
                let rows = x.len() / len.max(1);
                match vals(x) {
                    Vals::F(v) => {
                        let mut o = Vec::with_capacity(rows * out_len);
                        for r in 0..rows {
                            for w in 0..out_len {
                                let s = r * len + w * stride;
                                o.push(nan_max(&v[s..s + kernel]));
                            }
                        }
                        build(shape, dtype, floats_to(dtype, o))
                    }
                    Vals::I(v) => {
                        let mut o = Vec::with_capacity(rows * out_len);
                        for r in 0..rows {
                            for w in 0..out_len {
                                let s = r * len + w * stride;
                                o.push(*v[s..s + kernel].iter().max().unwrap());
                            }
                        }
                        build(shape, dtype, ints_to(dtype, o))
                    }
                    Vals::B(_) => unreachable!("signature rejects Bool"),
                }
            }
            Op::MaxUnpool2d { output_size } => {
                self.unpool(x, inputs[1], *output_size, shape, dtype)?
            }
        };
        Ok(t)
    }

    fn binary(
        &self,
        op: &Op,
        a: &Tensor,
        b: &Tensor,
        shape: Vec<usize>,
        dtype: DType,
    ) -> Result<Tensor, NodeError> {
        let v = match (vals(a), vals(b)) {
            (Vals::F(x), Vals::F(y)) => {
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add | Op::AddInPlace => |p, q| p + q,
                    Op::Sub => |p, q| p - q,
                    Op::Mul => |p, q| p * q,
                    Op::Div => |p, q| p / q,
                    _ => float_remainder,
                };
                Vals::F(x.iter().zip(&y).map(|(&p, &q)| f(p, q)).collect())
            }
            (Vals::I(x), Vals::I(y)) => {
                let mut o = Vec::with_capacity(x.len());
                for (&p, &q) in x.iter().zip(&y) {
                    o.push(match op {
                        Op::Add | Op::AddInPlace => p.wrapping_add(q),
                        Op::Sub => p.wrapping_sub(q),
                        Op::Mul => p.wrapping_mul(q),
                        Op::Div if q == 0 => self.div_by_zero(p)?,
                        Op::Div => p.wrapping_div(q),
                        _ if q == 0 => self.div_by_zero(p)?,
                        _ => {
                            let r = p.wrapping_rem(q);
                            if r != 0 && (r < 0) != (q < 0) {
                                r + q
                            } else {
                                r
                            }
                        }
                    });
                }
                Vals::I(o)
            }
            _ => unreachable!("signature requires equal numeric dtypes"),
        };
        Ok(build_vals(shape, dtype, v))
    }

    #[allow(clippy::too_many_arguments)]
    fn matmul(
        &self,
        bias: Option<&Tensor>,
        a: &Tensor,
        b: &Tensor,
        alpha: f64,
        beta: f64,
        shape: Vec<usize>,
        dtype: DType,
    ) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let (av, bv) = (f64s(a), f64s(b));
        let bias = bias.map(|t| (f64s(t), t.shape().len() == 1));
        let mut red = self.reducer();
        let mut o = Vec::with_capacity(m * n);
        let mut terms = Vec::with_capacity(k);
        for i in 0..m {
            for j in 0..n {
                terms.clear();
                terms.extend((0..k).map(|l| av[i * k + l] * bv[l * n + j]));
                let dot = red.sum(&terms);
                o.push(match &bias {
                    None => dot,
                    Some((bv, row)) => {
                        let bij = if *row { bv[j] } else { bv[i * n + j] };
                        beta * bij + alpha * dot
                    }
                });
            }
        }
        build(shape, dtype, floats_to(dtype, o))
    }

    fn pad(
        &self,
        x: &Tensor,
        before: usize,
        after: usize,
        value: f64,
        shape: Vec<usize>,
        dtype: DType,
    ) -> Tensor {
        let len = *x.shape().last().unwrap();
        let out_len = len + before + after;
        let rows = if len == 0 {
            shape.iter().product::<usize>() / out_len.max(1)
        } else {
            x.len() / len
        };
        let overflow = match self.profile.flawed_ops.get(&crate::graph::OpKind::Pad) {
            Some(Flaw::PadOverflow { threshold }) if before + after > *threshold => {
                Some(*threshold)
            }
            _ => None,
        };
        // Index `x.len()` in the extended buffer holds the pad value.
        let fill = x.len();
        let mut idx = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            for p in 0..out_len {
                let src = if p >= before && p < before + len && overflow.is_none_or(|t| p < t) {
                    r * len + (p - before)
                } else {
                    fill
                };
                idx.push(src);
            }
        }
        let pad = floats_to(dtype, vec![value]);
        build(shape, dtype, concat(x.data(), &pad).select(&idx))
    }

    fn cast(&self, x: &Tensor, to: DType, shape: Vec<usize>) -> Result<Tensor, NodeError> {
        let data = match (vals(x), to) {
            (Vals::F(v), t) if t.is_int() => {
                let mut o = Vec::with_capacity(v.len());
                for f in v {
                    o.push(if f.is_finite() {
                        match t {
                            DType::I32 => i64::from(f as i32),
                            _ => f as i64,
                        }
                    } else {
                        self.cast_non_finite(f, t)?
                    });
                }
                ints_to(t, o)
            }
            (Vals::F(v), t) => floats_to(t, v),
            (Vals::I(v), t) => ints_to(t, v),
            (Vals::B(v), DType::Bool) => Buffer::Bool(v),
            (Vals::B(v), t) => ints_to(t, v.into_iter().map(i64::from).collect()),
        };
        Ok(build(shape, to, data))
    }

    fn gather(
        &self,
        x: &Tensor,
        index: &Tensor,
        axis: usize,
        shape: Vec<usize>,
        dtype: DType,
    ) -> Result<Tensor, NodeError> {
        let raw = i64s(index);
        let xs = row_major_strides(x.shape());
        let is = row_major_strides(index.shape());
        let extent = x.shape()[axis];
        let mut idx = Vec::with_capacity(raw.len());
        for (flat, &r) in raw.iter().enumerate() {
            let mut src = 0;
            for d in 0..shape.len() {
                let coord = (flat / is[d]) % index.shape()[d];
                let c = if d == axis {
                    self.index(r, extent, "index")?
                } else {
                    coord
                };
                src += c * xs[d];
            }
            idx.push(src);
        }
        Ok(build(shape, dtype, x.data().select(&idx)))
    }

    fn embedding_bag(
        &self,
        weight: &Tensor,
        indices: &Tensor,
        offsets: &Tensor,
        mode: BagMode,
        shape: Vec<usize>,
        dtype: DType,
    ) -> Result<Tensor, NodeError> {
        let (rows, dim) = (weight.shape()[0], weight.shape()[1]);
        let w = f64s(weight);
        let ind = i64s(indices)
            .into_iter()
            .map(|r| self.index(r, rows, "embedding index"))
            .collect::<Result<Vec<_>, _>>()?;
        let off = i64s(offsets)
            .into_iter()
            .map(|r| self.index(r, ind.len() + 1, "bag offset"))
            .collect::<Result<Vec<_>, _>>()?;
        let mut red = self.reducer();
        let mut o = Vec::with_capacity(off.len() * dim);
        let mut column = Vec::new();
        for (b, &start) in off.iter().enumerate() {
            let end = off.get(b + 1).copied().unwrap_or(ind.len()).max(start);
            let bag = &ind[start..end];
            for d in 0..dim {
                column.clear();
                column.extend(bag.iter().map(|&r| w[r * dim + d]));
                o.push(if column.is_empty() {
                    0.0
                } else {
                    match mode {
                        BagMode::Sum => red.sum(&column),
                        BagMode::Mean => red.sum(&column) / column.len() as f64,
                        BagMode::Max => nan_max(&column),
                    }
                });
            }
        }
        Ok(build(shape, dtype, floats_to(dtype, o)))
    }

    fn reduce(
        &self,
        x: &Tensor,
        axis: Option<usize>,
        shape: Vec<usize>,
        dtype: DType,
        how: Reduction,
    ) -> Tensor {
        let (outer, extent, inner) = match axis {
            Some(a) => split_axis(x.shape(), a),
            None => (1, x.len(), 1),
        };
        let lane = |o: usize, i: usize| (0..extent).map(move |j| (o * extent + j) * inner + i);
        let mut red = self.reducer();
        match (vals(x), how) {
            (_, Reduction::ArgMax) => {
                let v = f64s(x);
                let mut out = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = 0usize;
                        let mut top = f64::NEG_INFINITY;
                        for (j, k) in lane(o, i).enumerate() {
                            let cur = v[k];
                            if j == 0 || (!top.is_nan() && (cur.is_nan() || cur > top)) {
                                best = j;
                                top = cur;
                            }
                        }
                        out.push(best as i64);
                    }
                }
                build(shape, DType::I64, Buffer::I64(out))
            }
            (Vals::F(v), how) => {
                let mut out = Vec::with_capacity(outer * inner);
                let mut buf = Vec::with_capacity(extent);
                for o in 0..outer {
                    for i in 0..inner {
                        buf.clear();
                        buf.extend(lane(o, i).map(|k| v[k]));
                        out.push(match how {
                            Reduction::Sum => red.sum(&buf),
                            Reduction::Mean => red.sum(&buf) / extent as f64,
                            _ => nan_max(&buf),
                        });
                    }
                }
                build(shape, dtype, floats_to(dtype, out))
            }
            (Vals::I(v), how) => {
                let mut out = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let it = lane(o, i).map(|k| v[k]);
                        out.push(match how {
                            Reduction::Max => it.max().unwrap_or(0),
                            _ => it.fold(0i64, i64::wrapping_add),
                        });
                    }
                }
                build(shape, dtype, ints_to(dtype, out))
            }
            (Vals::B(_), _) => unreachable!("signature rejects Bool"),
        }
    }

    fn unpool(
        &self,
        x: &Tensor,
        indices: &Tensor,
        size: [usize; 2],
        shape: Vec<usize>,
        dtype: DType,
    ) -> Result<Tensor, NodeError> {
        let rank = x.shape().len();
        let plane_in = x.shape()[rank - 2] * x.shape()[rank - 1];
        let plane_out = size[0] * size[1];
        let planes = x.len().checked_div(plane_in).unwrap_or(0);
        let raw = i64s(indices);
        let mut red = self.reducer();
        // Index `x.len()` of the extended source buffer holds zero.
        let zero = x.len();
        let mut idx = vec![zero; planes * plane_out];
        for p in 0..planes {
            for e in red.write_order(plane_in) {
                let src = p * plane_in + e;
                let dst = self.index(raw[src], plane_out, "unpool index")?;
                idx[p * plane_out + dst] = src;
            }
        }
        let pad = floats_to(dtype, vec![0.0]);
        Ok(build(shape, dtype, concat(x.data(), &pad).select(&idx)))
    }

    /// Applies the profile's exceptional-value rule and seeded flaws to a
    /// node output.
    pub fn post_process(&self, kind: crate::graph::OpKind, t: Tensor) -> Tensor {
        let rule = self.profile.exceptional_rule(kind);
        let offset = match self.profile.flawed_ops.get(&kind) {
            Some(Flaw::Offset { delta }) => Some(*delta),
            _ => None,
        };
        if rule == ExceptionalRule::Propagate && offset.is_none() {
            return t;
        }
        let spec = t.spec().clone();
        let strides = t.strides().to_vec();
        let mut v = vals(&t);
        if let Vals::F(f) = &mut v {
            apply_rule(rule, f);
        }
        if let Some(delta) = offset {
            match &mut v {
                Vals::F(f) => f
                    .iter_mut()
                    .for_each(|x| *x = if x.is_finite() { *x + delta } else { 0.0 }),
                Vals::I(i) => {
                    let step = (delta.round() as i64).max(1);
                    i.iter_mut().for_each(|x| *x = x.wrapping_add(step));
                }
                Vals::B(b) => b.iter_mut().for_each(|x| *x = !*x),
            }
        }
        let data = match v {
            Vals::F(f) => floats_to(spec.dtype, f),
            Vals::I(i) => ints_to(spec.dtype, i),
            Vals::B(b) => Buffer::Bool(b),
        };
        Tensor::with_strides(spec, strides, data).expect("same layout as the kernel output")
    }
}

#[derive(Clone, Copy)]
enum Reduction {
    Sum,
    Mean,
    Max,
    ArgMax,
}

fn unary(
    x: &Tensor,
    shape: Vec<usize>,
    dtype: DType,
    f: impl Fn(f64) -> f64,
    g: impl Fn(i64) -> i64,
) -> Tensor {
    let v = match vals(x) {
        Vals::F(v) => Vals::F(v.into_iter().map(f).collect()),
        Vals::I(v) => Vals::I(v.into_iter().map(g).collect()),
        Vals::B(v) => Vals::B(v),
    };
    build_vals(shape, dtype, v)
}

/// Remainder with the sign of the divisor; zero divisors give NaN.
fn float_remainder(a: f64, b: f64) -> f64 {
    let r = a % b;
    if r != 0.0 && (r < 0.0) != (b < 0.0) {
        r + b
    } else {
        r
    }
}

/// Maximum that propagates NaN; the empty maximum is NaN.
fn nan_max(v: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    if v.is_empty() {
        return f64::NAN;
    }
    for &x in v {
        if x.is_nan() {
            return f64::NAN;
        }
        if x > m {
            m = x;
        }
    }
    m
}

fn concat(a: &Buffer, b: &Buffer) -> Buffer {
    match (a, b) {
        (Buffer::F64(x), Buffer::F64(y)) => Buffer::F64([x.as_slice(), y].concat()),
        (Buffer::F32(x), Buffer::F32(y)) => Buffer::F32([x.as_slice(), y].concat()),
        (Buffer::I64(x), Buffer::I64(y)) => Buffer::I64([x.as_slice(), y].concat()),
        (Buffer::I32(x), Buffer::I32(y)) => Buffer::I32([x.as_slice(), y].concat()),
        (Buffer::Bool(x), Buffer::Bool(y)) => Buffer::Bool([x.as_slice(), y].concat()),
        _ => unreachable!("concatenated buffers share a dtype"),
    }
}

fn transpose(x: &Tensor, d0: usize, d1: usize) -> Tensor {
    let mut shape = x.shape().to_vec();
    shape.swap(d0, d1);
    let mut strides = x.strides().to_vec();
    strides.swap(d0, d1);
    let in_strides = row_major_strides(x.shape());
    let out_strides = row_major_strides(&shape);
    let idx: Vec<usize> = (0..x.len())
        .map(|flat| {
            let mut src = 0;
            for d in 0..shape.len() {
                let coord = (flat / out_strides[d]) % shape[d];
                let sd = if d == d0 {
                    d1
                } else if d == d1 {
                    d0
                } else {
                    d
                };
                src += coord * in_strides[sd];
            }
            src
        })
        .collect();
    let spec = TensorSpec::new(shape, x.dtype()).with_contiguous(false);
    Tensor::with_strides(spec, strides, x.data().select(&idx)).expect("transposed layout is dense")
}

fn apply_rule(rule: ExceptionalRule, v: &mut [f64]) {
    match rule {
        ExceptionalRule::Propagate => {}
        ExceptionalRule::NanToZero => v.iter_mut().filter(|x| x.is_nan()).for_each(|x| *x = 0.0),
        ExceptionalRule::InfNanSwap => v.iter_mut().for_each(|x| {
            if x.is_nan() {
                *x = f64::INFINITY;
            } else if x.is_infinite() {
                *x = f64::NAN;
            }
        }),
        ExceptionalRule::NanInterpolate => {
            let src = v.to_vec();
            for (i, x) in v.iter_mut().enumerate() {
                if !x.is_nan() {
                    continue;
                }
                let left = i.checked_sub(1).map(|j| src[j]);
                let right = src.get(i + 1).copied();
                *x = match (left, right) {
                    (Some(l), Some(r)) => (l + r) / 2.0,
                    (Some(n), None) | (None, Some(n)) => n,
                    (None, None) => f64::NAN,
                };
            }
        }
    }
}
