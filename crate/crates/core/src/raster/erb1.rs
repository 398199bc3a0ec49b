//! `ERB1` raster payloads: headerless little-endian row-major samples,
//! `f32` for band rasters and `u16` for label rasters. Extents live in the
//! dataset manifest.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn encode_u16(values: &[u16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    fs::write(path, encode_f32(values)).map_err(|e| Error::io(path, e))
}

pub fn write_u16(path: &Path, values: &[u16]) -> Result<()> {
    fs::write(path, encode_u16(values)).map_err(|e| Error::io(path, e))
}

fn read_exact(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!(
            "{}: holds {} bytes, extents require {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

pub fn read_f32(path: &Path, count: usize) -> Result<Vec<f32>> {
    let bytes = read_exact(path, count * 4)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn read_u16(path: &Path, count: usize) -> Result<Vec<u16>> {
    let bytes = read_exact(path, count * 2)?;
    Ok(bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
}
