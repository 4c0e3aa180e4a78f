//! Dense row-major `f32` tensors and the `TNSR` container format.
//!
//! Layout on disk (all little-endian):
//!
//! ```text
//! b"TNSR" | u32 rank | u32 dim[0] .. u32 dim[rank-1] | f32 data[prod(dims)]
//! ```

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const TNSR_MAGIC: [u8; 4] = *b"TNSR";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {got} were supplied")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("bad TNSR magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("TNSR payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("TNSR payload has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("dimension {0} does not fit in u32")]
    DimTooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ElementCount {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Returns a tensor sharing the data with a different shape of equal size.
    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::from_vec(shape, self.data)
    }

    /// Shape as `[d0, d1, d2]`, failing unless the tensor is rank 3.
    pub fn dims3(&self) -> Result<[usize; 3], TensorError> {
        match self.shape[..] {
            [a, b, c] => Ok([a, b, c]),
            _ => Err(TensorError::Rank {
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2], TensorError> {
        match self.shape[..] {
            [a, b] => Ok([a, b]),
            _ => Err(TensorError::Rank {
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_tnsr_bytes(&self) -> Result<Vec<u8>, TensorError> {
        let mut out = Vec::with_capacity(8 + 4 * self.shape.len() + 4 * self.data.len());
        self.write_tnsr(&mut out)?;
        Ok(out)
    }

    pub fn write_tnsr<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        w.write_all(&TNSR_MAGIC)?;
        let rank = u32::try_from(self.shape.len()).map_err(|_| TensorError::DimTooLarge(self.shape.len()))?;
        w.write_all(&rank.to_le_bytes())?;
        for &d in &self.shape {
            let d32 = u32::try_from(d).map_err(|_| TensorError::DimTooLarge(d))?;
            w.write_all(&d32.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn from_tnsr_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(TensorError::Truncated {
                    expected: n,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(8)?;
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != TNSR_MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header = 8 + 4 * rank;
        need(header)?;
        let shape: Vec<usize> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count: usize = shape.iter().product();
        let total = header + 4 * count;
        need(total)?;
        if bytes.len() > total {
            return Err(TensorError::TrailingBytes(bytes.len() - total));
        }
        let data = bytes[header..total]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { shape, data })
    }

    pub fn read_tnsr<R: Read>(mut r: R) -> Result<Self, TensorError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_tnsr_bytes(&buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        Self::from_tnsr_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        std::fs::write(path, self.to_tnsr_bytes()?)?;
        Ok(())
    }
}
