//! FPTN tensor files.
//!
//! Layout, all integers little-endian, no padding:
//!
//! | bytes        | field                                   |
//! |--------------|-----------------------------------------|
//! | 4            | magic `FPTN`                            |
//! | 2 (u16)      | version, currently 1                    |
//! | 1 (u8)       | dtype code, 1 = 32-bit float            |
//! | 1 (u8)       | ndim                                    |
//! | 4·ndim (u32) | extents                                 |
//! | 4·∏extents   | row-major f32 payload                   |
//!
//! A file holds exactly one tensor; bytes after the payload are an error.

use std::fs;
use std::path::Path;

use entpair_core::Tensor;

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FPTN";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
const FIXED_HEADER: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FptnError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported FPTN version {0}")]
    BadVersion(u16),
    #[error("unsupported dtype code {0}")]
    BadDtype(u8),
    #[error("truncated file: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after the payload")]
    TrailingBytes(usize),
    #[error("shape {0:?} cannot be stored")]
    BadShape(Vec<usize>),
}

/// Appends the encoding of `t` to `out`.
pub fn encode_into(t: &Tensor<f32>, out: &mut Vec<u8>) -> Result<(), FptnError> {
    let shape = t.shape();
    if shape.len() > usize::from(u8::MAX) || shape.iter().any(|&d| u32::try_from(d).is_err()) {
        return Err(FptnError::BadShape(shape.to_vec()));
    }
    out.reserve(FIXED_HEADER + 4 * shape.len() + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode(t: &Tensor<f32>) -> Result<Vec<u8>, FptnError> {
    let mut out = Vec::new();
    encode_into(t, &mut out)?;
    Ok(out)
}

fn need(bytes: &[u8], expected: usize) -> Result<(), FptnError> {
    if bytes.len() < expected {
        return Err(FptnError::Truncated { expected, found: bytes.len() });
    }
    Ok(())
}

/// Parses the header at the start of `bytes`; returns the shape and the
/// header length.
pub fn decode_header(bytes: &[u8]) -> Result<(Vec<usize>, usize), FptnError> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(FptnError::BadMagic(bytes[..bytes.len().min(4)].to_vec()));
    }
    need(bytes, FIXED_HEADER)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FptnError::BadVersion(version));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(FptnError::BadDtype(bytes[6]));
    }
    let ndim = usize::from(bytes[7]);
    let header = FIXED_HEADER + 4 * ndim;
    need(bytes, header)?;
    let shape = bytes[FIXED_HEADER..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    Ok((shape, header))
}

/// Decodes one tensor from the start of `bytes` and returns it with the
/// number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Tensor<f32>, usize), FptnError> {
    let (shape, header) = decode_header(bytes)?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FptnError::BadShape(shape.clone()))?;
    let end = header + count;
    need(bytes, end)?;
    let data = bytes[header..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let t = Tensor::new(shape.clone(), data).map_err(|_| FptnError::BadShape(shape))?;
    Ok((t, end))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>, FptnError> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FptnError::TrailingBytes(bytes.len() - used));
    }
    Ok(t)
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Fptn { path: path.to_path_buf(), source })
}

/// Reads only the header of an FPTN file and returns the declared shape.
pub fn read_shape(path: &Path) -> Result<Vec<usize>> {
    use std::io::Read;
    let mut head = Vec::new();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    file.take((FIXED_HEADER + 4 * 255) as u64)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path, e))?;
    decode_header(&head)
        .map(|(shape, _)| shape)
        .map_err(|source| Error::Fptn { path: path.to_path_buf(), source })
}

pub fn write_tensor(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let bytes = encode(t).map_err(|source| Error::Fptn { path: path.to_path_buf(), source })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
