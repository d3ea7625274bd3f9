//! On-disk formats: the `SSAT` tensor container and 8-bit PGM heatmaps.
//!
//! SSAT layout, all little-endian:
//!
//! | bytes            | field                               |
//! |------------------|-------------------------------------|
//! | 4                | magic `b"SSAT"`                     |
//! | 2                | version (`u16`, currently 1)        |
//! | 2                | rank (`u16`, 1..=4)                 |
//! | 4 * rank         | extents (`u32` each)                |
//! | 4 * product(dims)| payload (`f32` each, row-major)     |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, SsaError};
use crate::tensor::{Tensor, MAX_RANK};

pub const SSAT_MAGIC: [u8; 4] = *b"SSAT";
pub const SSAT_VERSION: u16 = 1;

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    buf.extend_from_slice(&SSAT_MAGIC);
    buf.extend_from_slice(&SSAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t.rank() as u16).to_le_bytes());
    for &d in t.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 4 || bytes[..4] != SSAT_MAGIC {
        return Err(SsaError::BadMagic);
    }
    let header = |at: usize| -> Result<u16> {
        bytes
            .get(at..at + 2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .ok_or(SsaError::TruncatedPayload {
                expected: at + 2,
                found: bytes.len(),
            })
    };
    let version = header(4)?;
    if version != SSAT_VERSION {
        return Err(SsaError::BadVersion(version));
    }
    let rank = header(6)? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(SsaError::InvalidDims(vec![0; rank.min(MAX_RANK + 1)]));
    }
    let dims_end = 8 + 4 * rank;
    let dims_bytes = bytes.get(8..dims_end).ok_or(SsaError::TruncatedPayload {
        expected: dims_end,
        found: bytes.len(),
    })?;
    let dims: Vec<usize> = dims_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(SsaError::InvalidDims(dims));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| SsaError::InvalidDims(dims.clone()))?;
    let payload = &bytes[dims_end..];
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| SsaError::InvalidDims(dims.clone()))?;
    if payload.len() != expected {
        return Err(SsaError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(dims, data)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SsaError::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn save_tensor(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_tensor(t))
}

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| SsaError::io(dir, e))?;
    tmp.write_all(bytes)
        .map_err(|e| SsaError::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| SsaError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| SsaError::io(path, e.error))?;
    Ok(())
}

/// Binary (P5) PGM of a rank-2 map in `[0, 1]`; values are scaled by 255
/// and rounded half away from zero.
pub fn encode_pgm(map: &Tensor<f32>) -> Result<Vec<u8>> {
    if map.rank() != 2 {
        return Err(SsaError::ShapeMismatch(format!(
            "PGM export expects an H x W map, got {:?}",
            map.dims()
        )));
    }
    let (h, w) = (map.dims()[0], map.dims()[1]);
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    buf.extend(
        map.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(buf)
}

/// Min-max normalize `map`, then encode it as PGM.
pub fn heatmap_pgm(map: &Tensor<f32>) -> Result<Vec<u8>> {
    encode_pgm(&map.minmax_normalize())
}
