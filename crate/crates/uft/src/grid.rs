//! `Grid` — the universal sample payload: a dense rank-4 array
//! `[frames T, height H, width W, channels C]` holding one modality's
//! pixel-space video.

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::{Buffer, DType, Tensor};

#[derive(Clone, Debug)]
pub struct Grid {
    t: Tensor,
}

impl Grid {
    pub fn from_tensor(t: Tensor) -> Result<Grid> {
        if t.rank() != 4 {
            return Err(Error::invalid(
                "grid",
                format!("expected rank 4 [T,H,W,C], got {:?}", t.shape()),
            ));
        }
        Ok(Grid { t })
    }

    pub fn zeros(extent: (usize, usize, usize), channels: usize, dtype: DType) -> Grid {
        let (t, h, w) = extent;
        Grid {
            t: Tensor::zeros(&[t, h, w, channels], dtype),
        }
    }

    pub fn from_f32(extent: (usize, usize, usize), channels: usize, data: Vec<f32>) -> Result<Grid> {
        let (t, h, w) = extent;
        Grid::from_tensor(Tensor::from_f32(&[t, h, w, channels], data)?)
    }

    /// Standard-normal grid, one draw per element in row-major order.
    pub fn noise(extent: (usize, usize, usize), channels: usize, dtype: DType, rng: &mut Rng) -> Grid {
        let (t, h, w) = extent;
        let n = t * h * w * channels;
        let buf = match dtype {
            DType::F32 => Buffer::F32((0..n).map(|_| rng.normal_f32()).collect()),
            DType::F64 => Buffer::F64((0..n).map(|_| rng.normal_f64()).collect()),
        };
        Grid {
            t: Tensor::build_plain(&[t, h, w, channels], buf),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.t
    }

    pub fn into_tensor(self) -> Tensor {
        self.t
    }

    pub fn dtype(&self) -> DType {
        self.t.dtype()
    }

    pub fn frames(&self) -> usize {
        self.t.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.t.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.t.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.t.shape()[3]
    }

    pub fn extent(&self) -> (usize, usize, usize) {
        (self.frames(), self.height(), self.width())
    }

    pub fn get(&self, f: usize, h: usize, w: usize, c: usize) -> f64 {
        let (hh, ww, cc) = (self.height(), self.width(), self.channels());
        self.t.buffer().get(((f * hh + h) * ww + w) * cc + c)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.t.shape() == other.t.shape()
    }

    pub fn bit_eq(&self, other: &Grid) -> bool {
        self.t.bit_eq(&other.t)
    }

    /// Elementwise map into a new grid of the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        let buf = match self.t.buffer() {
            Buffer::F32(v) => Buffer::F32(v.iter().map(|&x| f(x as f64) as f32).collect()),
            Buffer::F64(v) => Buffer::F64(v.iter().map(|&x| f(x)).collect()),
        };
        Grid {
            t: Tensor::build_plain(self.t.shape(), buf),
        }
    }

    /// Elementwise combine: out[i] = f(self[i], other[i]).
    pub fn zip(&self, other: &Grid, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.t.shape().to_vec(),
                rhs: other.t.shape().to_vec(),
            });
        }
        if self.dtype() != other.dtype() {
            return Err(Error::DtypeMismatch {
                op,
                lhs: self.dtype(),
                rhs: other.dtype(),
            });
        }
        let buf = match (self.t.buffer(), other.t.buffer()) {
            (Buffer::F32(a), Buffer::F32(b)) => {
                Buffer::F32(a.iter().zip(b).map(|(&x, &y)| f(x as f64, y as f64) as f32).collect())
            }
            (Buffer::F64(a), Buffer::F64(b)) => {
                Buffer::F64(a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            }
            _ => unreachable!(),
        };
        Ok(Grid {
            t: Tensor::build_plain(self.t.shape(), buf),
        })
    }

    pub fn to_f64(&self) -> Grid {
        Grid {
            t: Tensor::build_plain(self.t.shape(), Buffer::F64(self.t.buffer().to_f64_vec())),
        }
    }
}
