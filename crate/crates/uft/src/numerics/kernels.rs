//! Raw numeric kernels shared by the op catalog and its backward passes.
//!
//! Everything here is deterministic: reductions run in a fixed order and the
//! gemm core (matrixmultiply) is single-threaded, so identical inputs give
//! bit-identical outputs run after run.

use num_traits::Float;

/// Scalar types the tensor core computes in.
pub trait Real: Float + Send + Sync + 'static {
    fn fr(x: f64) -> Self;
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);
}

impl Real for f32 {
    fn fr(x: f64) -> Self {
        x as f32
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Real for f64 {
    fn fr(x: f64) -> Self {
        x
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

/// c = a · bᵀ where a is [m,k] and b is [n,k]. Stride trick, no copy.
pub fn gemm_bt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_strided(m, k, n, a, k as isize, 1, b, 1, k as isize, c);
}

/// c = aᵀ · b where a is [k,m] and b is [k,n].
pub fn gemm_at<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_strided(m, k, n, a, 1, m as isize, b, n as isize, 1, c);
}

fn gemm_strided<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    rsa: isize,
    csa: isize,
    b: &[T],
    rsb: isize,
    csb: isize,
    c: &mut [T],
) {
    // Route through the f32/f64 monomorphized entry points.
    use std::any::TypeId;
    if TypeId::of::<T>() == TypeId::of::<f32>() {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr() as *const f32,
                rsa,
                csa,
                b.as_ptr() as *const f32,
                rsb,
                csb,
                0.0,
                c.as_mut_ptr() as *mut f32,
                n as isize,
                1,
            );
        }
    } else {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr() as *const f64,
                rsa,
                csa,
                b.as_ptr() as *const f64,
                rsb,
                csb,
                0.0,
                c.as_mut_ptr() as *mut f64,
                n as isize,
                1,
            );
        }
    }
}

// ── Broadcasting ─────────────────────────────────────────────────────

/// Right-aligned broadcast of two shapes; dims must match or be 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Row-major strides, with stride 0 on axes that broadcast (extent 1 vs >1).
fn bc_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        let s = if shape[i] == 1 { 0 } else { acc };
        strides[offset + i] = s;
        acc *= shape[i];
    }
    strides
}

/// Elementwise binary with broadcasting. `f(a_elem, b_elem) -> out_elem`.
pub fn bc_binary<T: Real>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let n: usize = out_shape.iter().product();
    // Fast path: identical shapes.
    if a_shape == out_shape && b_shape == out_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    // Fast path: b is a trailing vector broadcast over leading dims of a.
    if a_shape == out_shape && b_shape.len() <= a_shape.len() {
        let tail: usize = b_shape.iter().product();
        if tail > 0
            && n % tail == 0
            && a_shape[a_shape.len() - b_shape.len()..] == *b_shape
        {
            let mut out = Vec::with_capacity(n);
            for chunk in a.chunks_exact(tail) {
                out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
            }
            return out;
        }
    }
    let sa = bc_strides(a_shape, out_shape);
    let sb = bc_strides(b_shape, out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f(a[oa], b[ob]));
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * out_shape[ax];
            ob -= sb[ax] * out_shape[ax];
        }
    }
    out
}

/// Reduce-sum `src` (shaped `from`) down to shape `to` (the broadcast
/// operand's shape). Inverse of broadcasting for gradients.
pub fn reduce_to<T: Real>(src: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return src.to_vec();
    }
    let n_to: usize = to.iter().product();
    let mut out = vec![T::zero(); n_to];
    let strides = bc_strides(to, from);
    let rank = from.len();
    let mut idx = vec![0usize; rank];
    let mut ot = 0usize;
    for &v in src {
        out[ot] = out[ot] + v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ot += strides[ax];
            if idx[ax] < from[ax] {
                break;
            }
            idx[ax] = 0;
            ot -= strides[ax] * from[ax];
        }
    }
    out
}

// ── Row-structured kernels (last axis = row) ─────────────────────────

pub fn softmax_rows<T: Real>(x: &[T], row: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (xr, or) in x.chunks_exact(row).zip(out.chunks_exact_mut(row)) {
        let mut m = xr[0];
        for &v in xr {
            if v > m {
                m = v;
            }
        }
        let mut sum = T::zero();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - m).exp();
            sum = sum + *o;
        }
        for o in or.iter_mut() {
            *o = *o / sum;
        }
    }
    out
}

/// dx for softmax given the forward output y: dx = y ⊙ (dy − Σ dy·y).
pub fn softmax_rows_grad<T: Real>(y: &[T], dy: &[T], row: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, dyr), dxr) in y
        .chunks_exact(row)
        .zip(dy.chunks_exact(row))
        .zip(dx.chunks_exact_mut(row))
    {
        let mut dot = T::zero();
        for (&yv, &dv) in yr.iter().zip(dyr) {
            dot = dot + yv * dv;
        }
        for ((o, &yv), &dv) in dxr.iter_mut().zip(yr).zip(dyr) {
            *o = yv * (dv - dot);
        }
    }
    dx
}

pub fn layer_norm_rows<T: Real>(x: &[T], row: usize, eps: f64) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let inv_n = T::fr(1.0 / row as f64);
    for (xr, or) in x.chunks_exact(row).zip(out.chunks_exact_mut(row)) {
        let mut mean = T::zero();
        for &v in xr {
            mean = mean + v;
        }
        mean = mean * inv_n;
        let mut var = T::zero();
        for &v in xr {
            let d = v - mean;
            var = var + d * d;
        }
        var = var * inv_n;
        let inv_std = (var + T::fr(eps)).sqrt().recip();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - mean) * inv_std;
        }
    }
    out
}

/// dx = (dy − mean(dy) − x̂ · mean(dy ⊙ x̂)) / σ, recomputing stats from x.
pub fn layer_norm_rows_grad<T: Real>(x: &[T], dy: &[T], row: usize, eps: f64) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    let inv_n = T::fr(1.0 / row as f64);
    for ((xr, dyr), dxr) in x
        .chunks_exact(row)
        .zip(dy.chunks_exact(row))
        .zip(dx.chunks_exact_mut(row))
    {
        let mut mean = T::zero();
        for &v in xr {
            mean = mean + v;
        }
        mean = mean * inv_n;
        let mut var = T::zero();
        for &v in xr {
            let d = v - mean;
            var = var + d * d;
        }
        var = var * inv_n;
        let inv_std = (var + T::fr(eps)).sqrt().recip();
        let mut mean_dy = T::zero();
        let mut mean_dy_xhat = T::zero();
        for (&v, &d) in xr.iter().zip(dyr) {
            let xhat = (v - mean) * inv_std;
            mean_dy = mean_dy + d;
            mean_dy_xhat = mean_dy_xhat + d * xhat;
        }
        mean_dy = mean_dy * inv_n;
        mean_dy_xhat = mean_dy_xhat * inv_n;
        for ((o, &v), &d) in dxr.iter_mut().zip(xr).zip(dyr) {
            let xhat = (v - mean) * inv_std;
            *o = (d - mean_dy - xhat * mean_dy_xhat) * inv_std;
        }
    }
    dx
}

pub fn sigmoid<T: Real>(x: T) -> T {
    (T::one() + (-x).exp()).recip()
}

/// Rotate adjacent channel pairs of `x` ([n, heads, d_head]) by per-(token,
/// pair) angles ([n, d_head/2]); the same rotation is applied to every head.
pub fn rotary_pairs<T: Real>(
    x: &[T],
    n: usize,
    heads: usize,
    d_head: usize,
    angles: &[f64],
    invert: bool,
) -> Vec<T> {
    let pairs = d_head / 2;
    debug_assert_eq!(angles.len(), n * pairs);
    debug_assert_eq!(x.len(), n * heads * d_head);
    let mut out = vec![T::zero(); x.len()];
    let sign = if invert { -1.0 } else { 1.0 };
    for tok in 0..n {
        for p in 0..pairs {
            let theta = sign * angles[tok * pairs + p];
            let (c, s) = (T::fr(theta.cos()), T::fr(theta.sin()));
            for h in 0..heads {
                let base = (tok * heads + h) * d_head + 2 * p;
                let a = x[base];
                let b = x[base + 1];
                out[base] = a * c - b * s;
                out[base + 1] = a * s + b * c;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_small_exact() {
        // [2x3] ones · [3x2] ones = [2x2] threes
        let a = vec![1.0f32; 6];
        let b = vec![1.0f32; 6];
        let mut c = vec![0.0f32; 4];
        f32::gemm(2, 3, 2, &a, &b, &mut c);
        assert_eq!(c, vec![3.0; 4]);
    }

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 1], &[1, 3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[2], &[3]), None);
    }

    #[test]
    fn reduce_to_undoes_broadcast() {
        // [2,3] summed down to [3]
        let src = vec![1.0f64, 2.0, 3.0, 10.0, 20.0, 30.0];
        let r = reduce_to(&src, &[2, 3], &[3]);
        assert_eq!(r, vec![11.0, 22.0, 33.0]);
        let r2 = reduce_to(&src, &[2, 3], &[2, 1]);
        assert_eq!(r2, vec![6.0, 60.0]);
    }

    #[test]
    fn softmax_uniform_row() {
        let y = softmax_rows(&[0.0f32, 0.0, 0.0], 3);
        for v in y {
            assert_eq!(v, 1.0f32 / 3.0);
        }
    }

    #[test]
    fn rotary_preserves_pair_norm() {
        let x = vec![0.3f32, -1.2, 0.7, 2.0];
        let angles = vec![0.9f64, -2.3];
        let y = rotary_pairs(&x, 1, 1, 4, &angles, false);
        for p in 0..2 {
            let n0 = (x[2 * p].powi(2) + x[2 * p + 1].powi(2)).sqrt();
            let n1 = (y[2 * p].powi(2) + y[2 * p + 1].powi(2)).sqrt();
            assert!((n0 - n1).abs() < 1e-6);
        }
        // Inverse rotation restores the input.
        let back = rotary_pairs(&y, 1, 1, 4, &angles, true);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
