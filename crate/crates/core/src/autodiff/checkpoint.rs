//! `TCKPT1` parameter checkpoints.
//!
//! Layout: the 6-byte magic `TCKPT1`, then one record per parameter until end
//! of file: name length (u32 LE), UTF-8 name, rank (u32 LE), each extent
//! (u32 LE), payload as little-endian f32 in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 6] = b"TCKPT1";

pub fn encode<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (_, e) in store.iter() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.tensor.rank() as u32).to_le_bytes());
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.tensor.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("truncated record".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parsed checkpoint records in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("missing TCKPT1 magic".into()));
    }
    let mut r = Reader { buf: &bytes[MAGIC.len()..] };
    let mut records = Vec::new();
    while !r.buf.is_empty() {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint("extent overflow".into()))?;
        let data = r.take(n)?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    Ok(records)
}

pub fn save<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = encode(store);
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads values into an already-built store; names and shapes must match exactly.
pub fn load_into<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = decode(&bytes)?;
    if records.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "{} holds {} parameters, model expects {}",
            path.display(),
            records.len(),
            store.len()
        )));
    }
    for (name, t) in records {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter '{name}'")))?;
        store.set(id, t.cast())?;
    }
    Ok(())
}
