//! Dense row-major `f32` tensors and the portable `.drt` tensor file format.
//!
//! A `.drt` file is little-endian:
//!
//! | bytes            | content                         |
//! |------------------|---------------------------------|
//! | 0..4             | magic `DRT1`                    |
//! | 4..8             | `u32` version, always 1         |
//! | 8..12            | `u32` rank                      |
//! | 12..12+8·rank    | `u64` dimension sizes           |
//! | rest             | `product(shape)` × `f32` values |

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const DRT_MAGIC: [u8; 4] = *b"DRT1";
pub const DRT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor rank must be at least 1")]
    EmptyShape,
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch { expected: usize, shape: Vec<usize> },
    #[error("tensor contains a non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("bad magic {0:?}, not a .drt tensor file")]
    BadMagic([u8; 4]),
    #[error("unsupported .drt version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated .drt payload: {0}")]
    Truncated(&'static str),
    #[error(".drt payload has {0} trailing bytes beyond the declared shape")]
    TrailingBytes(usize),
    #[error("declared shape {0:?} is too large")]
    ShapeOverflow(Vec<u64>),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An n-dimensional dense array of `f32` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.is_empty() {
            return Err(TensorError::EmptyShape);
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        assert!(!shape.is_empty(), "tensor rank must be at least 1");
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    /// Builds an `[h, w]` map from a function of `(row, col)`.
    pub fn from_fn2(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Self {
            shape: vec![h, w],
            data,
        }
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

    /// `(height, width)` of a rank-2 map.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(TensorError::RankMismatch {
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    /// `(channels, height, width)` of a rank-3 stack.
    pub fn dims3(&self) -> Result<(usize, usize, usize), TensorError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::RankMismatch {
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Borrow channel `c` of a `[C, H, W]` tensor as a flat slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane: usize = self.shape[1..].iter().product();
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Copy channel `c` of a `[C, H, W]` tensor into an `[H, W]` tensor.
    pub fn channel_map(&self, c: usize) -> Result<Tensor, TensorError> {
        let (_, h, w) = self.dims3()?;
        Ok(Tensor {
            shape: vec![h, w],
            data: self.channel(c).to_vec(),
        })
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        Tensor::new(shape, self.data)
    }

    pub fn ensure_finite(&self) -> Result<(), TensorError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(TensorError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Byte length of this tensor's `.drt` encoding.
    pub fn drt_len(&self) -> usize {
        12 + 8 * self.shape.len() + 4 * self.data.len()
    }

    pub fn write_drt<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        w.write_all(&DRT_MAGIC)?;
        w.write_all(&DRT_VERSION.to_le_bytes())?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * self.data.len());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Decode a `.drt` stream. The stream must end exactly after the payload.
    pub fn read_drt<R: Read>(mut r: R) -> Result<Tensor, TensorError> {
        let mut word = [0u8; 4];
        read_exact(&mut r, &mut word, "magic")?;
        if word != DRT_MAGIC {
            return Err(TensorError::BadMagic(word));
        }
        read_exact(&mut r, &mut word, "version")?;
        let version = u32::from_le_bytes(word);
        if version != DRT_VERSION {
            return Err(TensorError::UnsupportedVersion(version));
        }
        read_exact(&mut r, &mut word, "rank")?;
        let rank = u32::from_le_bytes(word) as usize;
        if rank == 0 {
            return Err(TensorError::EmptyShape);
        }
        let mut raw_shape = Vec::with_capacity(rank.min(64));
        let mut dword = [0u8; 8];
        for _ in 0..rank {
            read_exact(&mut r, &mut dword, "shape")?;
            raw_shape.push(u64::from_le_bytes(dword));
        }
        let len = raw_shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .filter(|&bytes| bytes <= isize::MAX as u64)
            .ok_or_else(|| TensorError::ShapeOverflow(raw_shape.clone()))?;
        let shape: Vec<usize> = raw_shape.iter().map(|&d| d as usize).collect();

        let mut payload = Vec::new();
        r.by_ref().take(len).read_to_end(&mut payload)?;
        if (payload.len() as u64) < len {
            return Err(TensorError::Truncated("payload"));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(TensorError::TrailingBytes(rest.len()));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::new(shape, data)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), TensorError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => TensorError::Truncated(what),
        _ => TensorError::Io(e),
    })
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let mut w = BufWriter::new(File::create(path)?);
    t.write_drt(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    Tensor::read_drt(BufReader::new(File::open(path)?))
}
