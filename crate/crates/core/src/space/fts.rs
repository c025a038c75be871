//! `FTS1` binary feature files.
//!
//! Layout (little-endian, no padding): the magic `FTS1`, one dtype byte
//! (1 = f32, 2 = f64), one byte `ndim`, `ndim` u32 dimensions, then the raw
//! row-major values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::FeatureTensor;

pub const FTS_MAGIC: &[u8; 4] = b"FTS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Serializes `f` as a three-dimensional `FTS1` record.
pub fn encode_feature_bytes(f: &FeatureTensor, dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + 12 + f.len() * dtype.size());
    out.extend_from_slice(FTS_MAGIC);
    out.push(dtype.code());
    out.push(3);
    for dim in [f.channels(), f.height(), f.width()] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Format(format!("dimension {dim} does not fit in u32")))?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    match dtype {
        Dtype::F64 => f
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => f
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    Ok(out)
}

/// Parses an `FTS1` record. One- and two-dimensional records are read as a
/// single channel.
pub fn decode_feature_bytes(bytes: &[u8]) -> Result<FeatureTensor> {
    if bytes.len() < 6 {
        return Err(Error::Format("truncated header".into()));
    }
    if &bytes[..4] != FTS_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dtype = Dtype::from_code(bytes[4])?;
    let ndim = bytes[5] as usize;
    if !(1..=3).contains(&ndim) {
        return Err(Error::Format(format!("unsupported ndim {ndim}")));
    }
    let header_len = 6 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::Format("truncated dimension list".into()));
    }
    let dims: Vec<usize> = bytes[6..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(Error::Format(format!("zero-sized dimension in {dims:?}")));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {dims:?} overflows")))?;
    let payload = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format(format!("shape {dims:?} overflows")))?;
    let body = &bytes[header_len..];
    if body.len() != payload {
        return Err(Error::Format(format!(
            "expected {payload} data bytes for shape {dims:?}, found {}",
            body.len()
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite value in payload".into()));
    }
    let (c, h, w) = match dims[..] {
        [n] => (1, 1, n),
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => unreachable!("ndim checked above"),
    };
    FeatureTensor::new(c, h, w, data).map_err(|e| Error::Format(e.to_string()))
}

/// Writes `f` as f64, which round-trips bit-exactly.
pub fn write_feature_file(f: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    write_feature_file_as(f, path, Dtype::F64)
}

pub fn write_feature_file_as(
    f: &FeatureTensor,
    path: impl AsRef<Path>,
    dtype: Dtype,
) -> Result<()> {
    fs::write(path, encode_feature_bytes(f, dtype)?)?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_feature_bytes(&bytes)
}
