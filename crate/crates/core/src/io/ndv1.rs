//! NDV1 dense tensors.
//!
//! Layout: a 16-byte header (`b"NDV1"`, dtype `u32`, rank `u32`, reserved
//! `u32`), then `rank` dimensions as `u64`, then the row-major payload. All
//! integers and values are little-endian. dtype 1 is `f32`, 2 is `f64`.

use std::fs;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NDV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Values are held as `f64`; `dtype` decides the stored width.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: Dtype,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dtype: Dtype, dims: Vec<u64>, data: Vec<f64>) -> Result<Self> {
        let n: u64 = dims.iter().product();
        if n as usize != data.len() {
            return Err(Error::contract(format!(
                "tensor dims {dims:?} hold {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dtype, dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + self.dtype.width() * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dtype as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &self.data {
            match self.dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |offset: usize, msg: String| Error::parse(path, 1, offset + 1, msg);
        if bytes.len() < 16 {
            return Err(err(0, "truncated NDV1 header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(err(0, "bad magic (expected NDV1)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let dtype = match u32_at(4) {
            1 => Dtype::F32,
            2 => Dtype::F64,
            d => return Err(err(4, format!("unknown dtype {d}"))),
        };
        let rank = u32_at(8) as usize;
        let dims_end = 16 + 8 * rank;
        if bytes.len() < dims_end {
            return Err(err(16, format!("truncated dimensions for rank {rank}")));
        }
        let dims: Vec<u64> = (0..rank)
            .map(|i| u64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().expect("8 bytes")))
            .collect();
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
            .ok_or_else(|| err(16, "dimension product overflows".into()))?;
        let w = dtype.width();
        let expected = n
            .checked_mul(w)
            .ok_or_else(|| err(16, "payload size overflows".into()))?;
        let payload = &bytes[dims_end..];
        if payload.len() != expected {
            return Err(err(
                dims_end,
                format!("payload has {} bytes, expected {expected}", payload.len()),
            ));
        }
        let data = payload
            .chunks_exact(w)
            .map(|c| match dtype {
                Dtype::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            })
            .collect();
        Ok(Tensor { dtype, dims, data })
    }
}

pub fn write_ndv1(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &t.to_bytes())
}

pub fn read_ndv1(path: &Path) -> Result<Tensor> {
    Tensor::from_bytes(&fs::read(path)?, path)
}
