//! "UFT1" tensor blob format, shared by checkpoints and dataset containers.
//!
//! Layout: magic bytes `UFT1`, u8 dtype code (0 = f32, 1 = f64), u8 rank,
//! rank × u64 little-endian extents, raw little-endian data.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::{Buffer, DType, Tensor};

pub const MAGIC: &[u8; 4] = b"UFT1";

/// Size in bytes of an encoded blob with the given shape and dtype.
pub fn encoded_len(shape: &[usize], dtype: DType) -> usize {
    let elem = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    4 + 1 + 1 + 8 * shape.len() + elem * shape.iter().product::<usize>()
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    let code: u8 = match t.dtype() {
        DType::F32 => 0,
        DType::F64 => 1,
    };
    w.write_all(&[code, t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    match t.buffer() {
        Buffer::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Buffer::F64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let bad = |why: &str| Error::invalid("tensor blob", why.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    let (code, rank) = (head[0], head[1] as usize);
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| bad("truncated extents"))?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let buf = match code {
        0 => {
            let mut v = Vec::with_capacity(n);
            let mut b = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut b).map_err(|_| bad("truncated data"))?;
                v.push(f32::from_le_bytes(b));
            }
            Buffer::F32(v)
        }
        1 => {
            let mut v = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b).map_err(|_| bad("truncated data"))?;
                v.push(f64::from_le_bytes(b));
            }
            Buffer::F64(v)
        }
        _ => return Err(bad("unknown dtype code")),
    };
    Tensor::from_buffer(&shape, buf)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(&mut f);
    write_tensor(&mut w, t).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(f);
    read_tensor(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_f32_and_f64() {
        for t in [
            Tensor::from_f32(&[2, 3], vec![1.5, -2.0, 0.0, 3.25, 9.0, -0.125]).unwrap(),
            Tensor::from_f64(&[4], vec![1.0, -1.0, 1e-300, 1e300]).unwrap(),
        ] {
            let mut bytes = Vec::new();
            write_tensor(&mut bytes, &t).unwrap();
            assert_eq!(bytes.len(), encoded_len(t.shape(), t.dtype()));
            let back = read_tensor(&mut bytes.as_slice()).unwrap();
            assert!(back.bit_eq(&t));
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"NOPE\x00\x01".to_vec();
        assert!(read_tensor(&mut bytes.as_slice()).is_err());
    }
}
