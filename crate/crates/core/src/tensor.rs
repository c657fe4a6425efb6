//! Dense f32 tensors and the GCT1 container format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic   4 bytes  "GCT1"
//! rank    u32
//! dims    rank * u32
//! data    numel * f32, row-major
//! ```
//!
//! A file is therefore exactly `8 + 4 * rank + 4 * numel` bytes long.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GCT1";

/// Dense row-major tensor of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking rank >= 1, every dim >= 1 and that
    /// `data.len()` equals the product of the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel = checked_numel(&shape).ok_or_else(|| Error::InvalidShape(shape.clone()))?;
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = checked_numel(&shape).ok_or_else(|| Error::InvalidShape(shape.clone()))?;
        Ok(Tensor {
            shape,
            data: vec![0.0; numel],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Element at a multi-index. Panics when the index is out of bounds.
    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f32) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for dim {d}");
                acc * d + i
            })
    }

    /// Fails with the shape of `self` if it does not equal `expected`.
    pub fn expect_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Serializes into the GCT1 byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(encoded_len(self.rank(), self.numel()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses GCT1 bytes. `origin` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let truncated = |detail: String| Error::Truncated {
            path: origin.to_path_buf(),
            detail,
        };
        if bytes.len() < 4 {
            return Err(truncated(format!("{} bytes, header needs 8", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic(origin.to_path_buf()));
        }
        if bytes.len() < 8 {
            return Err(truncated(format!("{} bytes, header needs 8", bytes.len())));
        }
        let rank = read_u32(bytes, 4) as usize;
        let header_len = 4usize
            .checked_mul(rank)
            .and_then(|n| n.checked_add(8))
            .ok_or_else(|| truncated(format!("rank {rank} overflows")))?;
        if bytes.len() < header_len {
            return Err(truncated(format!(
                "rank {rank} needs {header_len} header bytes, file has {}",
                bytes.len()
            )));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|i| read_u32(bytes, 8 + 4 * i) as usize)
            .collect();
        let numel = checked_numel(&shape).ok_or_else(|| Error::InvalidShape(shape.clone()))?;
        let expected = numel
            .checked_mul(4)
            .and_then(|n| n.checked_add(header_len))
            .ok_or_else(|| Error::InvalidShape(shape.clone()))?;
        if bytes.len() < expected {
            return Err(truncated(format!(
                "shape {shape:?} needs {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        if bytes.len() > expected {
            return Err(Error::InvalidShape(shape));
        }
        let data: Vec<f32> = bytes[header_len..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                path: origin.to_path_buf(),
                index,
            });
        }
        Ok(Tensor { shape, data })
    }
}

/// Size in bytes of an encoded tensor.
pub fn encoded_len(rank: usize, numel: usize) -> usize {
    8 + 4 * rank + 4 * numel
}

fn checked_numel(shape: &[usize]) -> Option<usize> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
        return None;
    }
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Writes `t` to `path` in GCT1 format. Non-finite payloads are refused so
/// every written file reads back.
pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(index) = t.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            path: path.to_path_buf(),
            index,
        });
    }
    fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, path)
}
