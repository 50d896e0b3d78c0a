//! Little-endian tensor serialization.
//!
//! Layout: `b"TNT1"`, dtype tag (u8), rank (u32), one u64 per axis, then the
//! row-major payload.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{volume, Scalar, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype tag {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(9 + 8 * t.rank() + t.len() * T::DTYPE.size());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.push(T::DTYPE.tag());
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &n in t.dims() {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let dtype = DType::from_tag(tag[0])?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "stored dtype {dtype:?}, requested {:?}",
            T::DTYPE
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rank = u32::from_le_bytes(word) as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut d = [0u8; 8];
        r.read_exact(&mut d)?;
        dims.push(u64::from_le_bytes(d) as usize);
    }
    let n = volume(&dims);
    let mut payload = vec![0u8; n * dtype.size()];
    r.read_exact(&mut payload)?;
    let data = payload.chunks_exact(dtype.size()).map(T::read_le).collect();
    Tensor::new(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"TNT1");
        assert_eq!(buf[4], 0);
        assert_eq!(&buf[5..9], &2u32.to_le_bytes());
        assert_eq!(&buf[9..17], &2u64.to_le_bytes());
        assert_eq!(&buf[25..29], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 4 + 1 + 4 + 16 + 8);
    }

    #[test]
    fn roundtrip_and_dtype_check() {
        let t = Tensor::<f64>::from_fn(&[3, 2, 2], |i| i[0] as f64 - 0.25 * i[2] as f64);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back: Tensor<f64> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert!(read_tensor::<f32, _>(&mut buf.as_slice()).is_err());
        assert!(read_tensor::<f64, _>(&mut &buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::<f32>::scalar(3.5);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(read_tensor::<f32, _>(&mut buf.as_slice()).unwrap(), t);
    }
}
