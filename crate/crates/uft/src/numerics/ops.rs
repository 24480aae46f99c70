//! The forward op catalog. Every op validates shapes/dtypes, computes the
//! forward value exactly (up to dtype rounding), and records a tape node when
//! differentiation is in play.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::kernels as k;
use crate::numerics::tape::{emit, transpose_copy, Elem, OpKind};
use crate::numerics::tensor::{Buffer, Tensor};

fn same_dtype(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dtype() != b.dtype() {
        return Err(Error::DtypeMismatch {
            op,
            lhs: a.dtype(),
            rhs: b.dtype(),
        });
    }
    Ok(())
}

fn binary_elementwise(
    op_name: &'static str,
    kind: OpKind,
    a: &Tensor,
    b: &Tensor,
    f32_f: impl Fn(f32, f32) -> f32,
    f64_f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    same_dtype(op_name, a, b)?;
    let out_shape = k::broadcast_shape(a.shape(), b.shape()).ok_or(Error::ShapeMismatch {
        op: op_name,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let buf = match (a.buffer(), b.buffer()) {
        (Buffer::F32(x), Buffer::F32(y)) => {
            Buffer::F32(k::bc_binary(x, a.shape(), y, b.shape(), &out_shape, f32_f))
        }
        (Buffer::F64(x), Buffer::F64(y)) => {
            Buffer::F64(k::bc_binary(x, a.shape(), y, b.shape(), &out_shape, f64_f))
        }
        _ => unreachable!(),
    };
    emit(kind, vec![a.clone(), b.clone()], out_shape, buf)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary_elementwise("add", OpKind::Add, a, b, |x, y| x + y, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary_elementwise("sub", OpKind::Sub, a, b, |x, y| x - y, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary_elementwise("mul", OpKind::Mul, a, b, |x, y| x * y, |x, y| x * y)
}

pub fn scalar_mul(x: &Tensor, c: f64) -> Result<Tensor> {
    let buf = match x.buffer() {
        Buffer::F32(v) => Buffer::F32(v.iter().map(|&a| a * c as f32).collect()),
        Buffer::F64(v) => Buffer::F64(v.iter().map(|&a| a * c).collect()),
    };
    emit(OpKind::ScalarMul(c), vec![x.clone()], x.shape().to_vec(), buf)
}

/// Batched matrix product: `[..., m, k] · [..., k, n] -> [..., m, n]` with
/// equal leading dims.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_dtype("matmul", a, b)?;
    let (ashape, bshape) = (a.shape(), b.shape());
    let err = || Error::ShapeMismatch {
        op: "matmul",
        lhs: ashape.to_vec(),
        rhs: bshape.to_vec(),
    };
    if ashape.len() < 2 || ashape.len() != bshape.len() {
        return Err(err());
    }
    let r = ashape.len();
    if ashape[..r - 2] != bshape[..r - 2] || ashape[r - 1] != bshape[r - 2] {
        return Err(err());
    }
    let (m, kk, n) = (ashape[r - 2], ashape[r - 1], bshape[r - 1]);
    let batch: usize = ashape[..r - 2].iter().product();
    let mut out_shape = ashape[..r - 2].to_vec();
    out_shape.push(m);
    out_shape.push(n);

    fn run<T: Elem>(batch: usize, m: usize, kk: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
        let mut c = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            T::gemm(
                m,
                kk,
                n,
                &a[bi * m * kk..(bi + 1) * m * kk],
                &b[bi * kk * n..(bi + 1) * kk * n],
                &mut c[bi * m * n..(bi + 1) * m * n],
            );
        }
        c
    }

    let buf = match (a.buffer(), b.buffer()) {
        (Buffer::F32(x), Buffer::F32(y)) => Buffer::F32(run(batch, m, kk, n, x, y)),
        (Buffer::F64(x), Buffer::F64(y)) => Buffer::F64(run(batch, m, kk, n, x, y)),
        _ => unreachable!(),
    };
    emit(OpKind::Matmul, vec![a.clone(), b.clone()], out_shape, buf)
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    if numel != x.numel() {
        return Err(Error::ShapeMismatch {
            op: "reshape",
            lhs: x.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    emit(
        OpKind::Reshape,
        vec![x.clone()],
        shape.to_vec(),
        x.buffer().clone(),
    )
}

pub fn transpose(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::invalid(
            "transpose",
            format!("perm {:?} is not a permutation of 0..{}", perm, rank),
        ));
    }
    let (buf, out_shape) = match x.buffer() {
        Buffer::F32(v) => {
            let (data, s) = transpose_copy(v, x.shape(), perm);
            (Buffer::F32(data), s)
        }
        Buffer::F64(v) => {
            let (data, s) = transpose_copy(v, x.shape(), perm);
            (Buffer::F64(data), s)
        }
    };
    emit(
        OpKind::Transpose(perm.to_vec()),
        vec![x.clone()],
        out_shape,
        buf,
    )
}

pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    if xs.is_empty() {
        return Err(Error::invalid("concat", "no inputs"));
    }
    let first = xs[0];
    if axis >= first.rank() {
        return Err(Error::invalid(
            "concat",
            format!("axis {} out of range for rank {}", axis, first.rank()),
        ));
    }
    let mut axis_total = 0usize;
    for x in xs {
        same_dtype("concat", first, x)?;
        if x.rank() != first.rank() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        for (ax, (&da, &db)) in first.shape().iter().zip(x.shape()).enumerate() {
            if ax != axis && da != db {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: x.shape().to_vec(),
                });
            }
        }
        axis_total += x.shape()[axis];
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = axis_total;

    fn run<T: Elem>(xs: &[&Tensor], axis: usize, out_shape: &[usize]) -> Vec<T> {
        let inner: usize = out_shape[axis + 1..].iter().product();
        let outer: usize = out_shape[..axis].iter().product();
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let row_out = out_shape[axis] * inner;
        let mut offset = 0usize;
        for x in xs {
            let ext = x.shape()[axis];
            let data = T::slice(x.buffer());
            for o in 0..outer {
                let src = o * ext * inner;
                let dst = o * row_out + offset * inner;
                out[dst..dst + ext * inner].copy_from_slice(&data[src..src + ext * inner]);
            }
            offset += ext;
        }
        out
    }

    let buf = match first.buffer() {
        Buffer::F32(_) => Buffer::F32(run::<f32>(xs, axis, &out_shape)),
        Buffer::F64(_) => Buffer::F64(run::<f64>(xs, axis, &out_shape)),
    };
    emit(
        OpKind::Concat { axis },
        xs.iter().map(|&x| x.clone()).collect(),
        out_shape,
        buf,
    )
}

pub fn slice(x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    if axis >= x.rank() || start > end || end > x.shape()[axis] {
        return Err(Error::invalid(
            "slice",
            format!(
                "range {}..{} on axis {} of shape {:?}",
                start,
                end,
                axis,
                x.shape()
            ),
        ));
    }
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = end - start;

    fn run<T: Elem>(x: &Tensor, axis: usize, start: usize, taken: usize) -> Vec<T> {
        let shape = x.shape();
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let full = shape[axis];
        let data = T::slice(x.buffer());
        let mut out = vec![T::zero(); outer * taken * inner];
        for o in 0..outer {
            let src = (o * full + start) * inner;
            let dst = o * taken * inner;
            out[dst..dst + taken * inner].copy_from_slice(&data[src..src + taken * inner]);
        }
        out
    }

    let taken = end - start;
    let buf = match x.buffer() {
        Buffer::F32(_) => Buffer::F32(run::<f32>(x, axis, start, taken)),
        Buffer::F64(_) => Buffer::F64(run::<f64>(x, axis, start, taken)),
    };
    emit(OpKind::Slice { axis, start }, vec![x.clone()], out_shape, buf)
}

/// Softmax over the last axis.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let row = *x
        .shape()
        .last()
        .ok_or_else(|| Error::invalid("softmax", "rank-0 input"))?;
    let buf = match x.buffer() {
        Buffer::F32(v) => Buffer::F32(k::softmax_rows(v, row)),
        Buffer::F64(v) => Buffer::F64(k::softmax_rows(v, row)),
    };
    emit(OpKind::Softmax, vec![x.clone()], x.shape().to_vec(), buf)
}

/// Layer norm over the last axis, no learned affine.
pub fn layer_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let row = *x
        .shape()
        .last()
        .ok_or_else(|| Error::invalid("layer_norm", "rank-0 input"))?;
    let buf = match x.buffer() {
        Buffer::F32(v) => Buffer::F32(k::layer_norm_rows(v, row, eps)),
        Buffer::F64(v) => Buffer::F64(k::layer_norm_rows(v, row, eps)),
    };
    emit(
        OpKind::LayerNorm { eps },
        vec![x.clone()],
        x.shape().to_vec(),
        buf,
    )
}

fn unary(
    kind: OpKind,
    x: &Tensor,
    f32_f: impl Fn(f32) -> f32,
    f64_f: impl Fn(f64) -> f64,
) -> Result<Tensor> {
    let buf = match x.buffer() {
        Buffer::F32(v) => Buffer::F32(v.iter().map(|&a| f32_f(a)).collect()),
        Buffer::F64(v) => Buffer::F64(v.iter().map(|&a| f64_f(a)).collect()),
    };
    emit(kind, vec![x.clone()], x.shape().to_vec(), buf)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    unary(
        OpKind::Silu,
        x,
        |a| a * k::sigmoid(a),
        |a| a * k::sigmoid(a),
    )
}

pub fn square(x: &Tensor) -> Result<Tensor> {
    unary(OpKind::Square, x, |a| a * a, |a| a * a)
}

pub fn sqrt(x: &Tensor) -> Result<Tensor> {
    unary(OpKind::Sqrt, x, |a| a.sqrt(), |a| a.sqrt())
}

fn reduce_all(kind: OpKind, x: &Tensor, mean: bool) -> Result<Tensor> {
    let n = x.numel() as f64;
    let buf = match x.buffer() {
        Buffer::F32(v) => {
            let s: f64 = v.iter().map(|&a| a as f64).sum();
            Buffer::F32(vec![if mean { (s / n) as f32 } else { s as f32 }])
        }
        Buffer::F64(v) => {
            let s: f64 = v.iter().sum();
            Buffer::F64(vec![if mean { s / n } else { s }])
        }
    };
    emit(kind, vec![x.clone()], vec![1], buf)
}

/// Mean over all elements, producing a scalar (shape [1]).
pub fn mean_all(x: &Tensor) -> Result<Tensor> {
    reduce_all(OpKind::MeanAll, x, true)
}

/// Sum over all elements, producing a scalar (shape [1]).
pub fn sum_all(x: &Tensor) -> Result<Tensor> {
    reduce_all(OpKind::SumAll, x, false)
}

/// Rows of `table` selected by `indices`.
pub fn embedding_lookup(table: &Tensor, indices: &[usize]) -> Result<Tensor> {
    if table.rank() != 2 {
        return Err(Error::invalid(
            "embedding_lookup",
            format!("table must be rank 2, got {:?}", table.shape()),
        ));
    }
    let (rows, d) = (table.shape()[0], table.shape()[1]);
    if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
        return Err(Error::invalid(
            "embedding_lookup",
            format!("index {} out of range for table with {} rows", bad, rows),
        ));
    }

    fn run<T: Elem>(table: &Tensor, indices: &[usize], d: usize) -> Vec<T> {
        let data = T::slice(table.buffer());
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&data[i * d..(i + 1) * d]);
        }
        out
    }

    let buf = match table.buffer() {
        Buffer::F32(_) => Buffer::F32(run::<f32>(table, indices, d)),
        Buffer::F64(_) => Buffer::F64(run::<f64>(table, indices, d)),
    };
    emit(
        OpKind::Embedding {
            indices: Arc::new(indices.to_vec()),
        },
        vec![table.clone()],
        vec![indices.len(), d],
        buf,
    )
}

/// Per-position 2D rotations of adjacent channel pairs. `x` is
/// [n, heads, d_head]; `angles` has one angle per (position, pair), shared
/// across heads. Norm of every rotated pair is preserved.
pub fn rotary_rotate_pairs(x: &Tensor, angles: Arc<Vec<f64>>) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::invalid(
            "rotary_rotate_pairs",
            format!("expected [n, heads, d_head], got {:?}", x.shape()),
        ));
    }
    let (n, heads, d_head) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if d_head % 2 != 0 {
        return Err(Error::invalid(
            "rotary_rotate_pairs",
            format!("d_head {} must be even", d_head),
        ));
    }
    if angles.len() != n * d_head / 2 {
        return Err(Error::invalid(
            "rotary_rotate_pairs",
            format!(
                "expected {} angles, got {}",
                n * d_head / 2,
                angles.len()
            ),
        ));
    }
    let buf = match x.buffer() {
        Buffer::F32(v) => Buffer::F32(k::rotary_pairs(v, n, heads, d_head, &angles, false)),
        Buffer::F64(v) => Buffer::F64(k::rotary_pairs(v, n, heads, d_head, &angles, false)),
    };
    emit(
        OpKind::Rotary {
            angles,
            invert: false,
        },
        vec![x.clone()],
        x.shape().to_vec(),
        buf,
    )
}

/// x·W + b convenience built from the primitive catalog.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    add(&matmul(x, w)?, b)
}

/// Mean squared error over all elements of two same-shape tensors.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    mean_all(&square(&sub(a, b)?)?)
}
