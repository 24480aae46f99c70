//! Dense n-dimensional arrays with row-major contiguous storage.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) onto an immutable buffer. The only
//! mutation permitted after creation is gradient accumulation, which lives
//! behind a lock so parameter handles can be shared freely.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

/// Contiguous numeric storage for one tensor.
#[derive(Clone, Debug)]
pub enum Buffer {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Buffer {
    pub fn zeros(dtype: DType, n: usize) -> Buffer {
        match dtype {
            DType::F32 => Buffer::F32(vec![0.0; n]),
            DType::F64 => Buffer::F64(vec![0.0; n]),
        }
    }

    pub fn full(dtype: DType, n: usize, value: f64) -> Buffer {
        match dtype {
            DType::F32 => Buffer::F32(vec![value as f32; n]),
            DType::F64 => Buffer::F64(vec![value; n]),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Buffer::F32(_) => DType::F32,
            Buffer::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Buffer::F32(v) => v.len(),
            Buffer::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> &[f32] {
        match self {
            Buffer::F32(v) => v,
            Buffer::F64(_) => panic!("buffer is f64, expected f32"),
        }
    }

    pub fn as_f64(&self) -> &[f64] {
        match self {
            Buffer::F64(v) => v,
            Buffer::F32(_) => panic!("buffer is f32, expected f64"),
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        match self {
            Buffer::F32(v) => v[i] as f64,
            Buffer::F64(v) => v[i],
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self {
            Buffer::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Buffer::F64(v) => v.clone(),
        }
    }

    /// Elementwise in-place add; shapes must already agree.
    pub fn add_assign(&mut self, other: &Buffer) {
        match (self, other) {
            (Buffer::F32(a), Buffer::F32(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            (Buffer::F64(a), Buffer::F64(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            _ => panic!("dtype mismatch in gradient accumulation"),
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            Buffer::F32(v) => v.iter().all(|x| x.is_finite()),
            Buffer::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }
}

/// Position of a recorded operation: (tape generation, node index).
#[derive(Clone, Copy, Debug)]
pub(crate) struct NodeRef {
    pub gen: u64,
    pub idx: usize,
}

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct TensorInner {
    pub uid: u64,
    pub shape: Vec<usize>,
    pub buf: Buffer,
    pub requires_grad: bool,
    pub grad: Mutex<Option<Buffer>>,
    pub node: Option<NodeRef>,
}

#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Arc<TensorInner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("dtype", &self.dtype())
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::invalid(
            "tensor",
            format!("shape {:?} implies {} elements, buffer has {}", shape, numel, len),
        ));
    }
    Ok(())
}

impl Tensor {
    pub(crate) fn build(
        shape: Vec<usize>,
        buf: Buffer,
        requires_grad: bool,
        node: Option<NodeRef>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), buf.len());
        Tensor {
            inner: Arc::new(TensorInner {
                uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
                shape,
                buf,
                requires_grad,
                grad: Mutex::new(None),
                node,
            }),
        }
    }

    pub fn from_buffer(shape: &[usize], buf: Buffer) -> Result<Tensor> {
        check_len(shape, buf.len())?;
        Ok(Tensor::build(shape.to_vec(), buf, false, None))
    }

    /// Infallible in-crate constructor; panics on length mismatch.
    pub(crate) fn build_plain(shape: &[usize], buf: Buffer) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), buf.len());
        Tensor::build(shape.to_vec(), buf, false, None)
    }

    pub fn from_f32(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        Tensor::from_buffer(shape, Buffer::F32(data))
    }

    pub fn from_f64(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::from_buffer(shape, Buffer::F64(data))
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Tensor {
        let n = shape.iter().product();
        Tensor::build(shape.to_vec(), Buffer::zeros(dtype, n), false, None)
    }

    pub fn full(shape: &[usize], dtype: DType, value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::build(shape.to_vec(), Buffer::full(dtype, n, value), false, None)
    }

    pub fn scalar(dtype: DType, value: f64) -> Tensor {
        Tensor::full(&[1], dtype, value)
    }

    /// Leaf parameter: receives a gradient when reached by `backward`.
    pub fn param(shape: &[usize], buf: Buffer) -> Result<Tensor> {
        check_len(shape, buf.len())?;
        Ok(Tensor::build(shape.to_vec(), buf, true, None))
    }

    /// Same data, detached from autodiff (no grad, no tape node).
    pub fn detached(&self) -> Tensor {
        Tensor::build(self.inner.shape.clone(), self.inner.buf.clone(), false, None)
    }

    /// Copy of this tensor's data as a fresh leaf parameter.
    pub fn to_param(&self) -> Tensor {
        Tensor::build(self.inner.shape.clone(), self.inner.buf.clone(), true, None)
    }

    pub fn uid(&self) -> u64 {
        self.inner.uid
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.buf.len()
    }

    pub fn dtype(&self) -> DType {
        self.inner.buf.dtype()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn buffer(&self) -> &Buffer {
        &self.inner.buf
    }

    pub fn data_f32(&self) -> &[f32] {
        self.inner.buf.as_f32()
    }

    pub fn data_f64(&self) -> &[f64] {
        self.inner.buf.as_f64()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.buf.to_f64_vec()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::invalid(
                "tensor",
                format!("item() on shape {:?}", self.shape()),
            ));
        }
        Ok(self.inner.buf.get(0))
    }

    pub fn grad(&self) -> Option<Buffer> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &Buffer) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(g) => g.add_assign(delta),
            None => *slot = Some(delta.clone()),
        }
    }

    pub(crate) fn node(&self) -> Option<NodeRef> {
        self.inner.node
    }

    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape() != other.shape() || self.dtype() != other.dtype() {
            return false;
        }
        match (self.buffer(), other.buffer()) {
            (Buffer::F32(a), Buffer::F32(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Buffer::F64(a), Buffer::F64(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}
