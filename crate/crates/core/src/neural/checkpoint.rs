//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//! `b"MELO"`, `u32` version, `u32` kind length, kind bytes (UTF-8), then
//! until end of file, per parameter in name order: `u32` name length, name
//! bytes, `u32` rank, `rank × u64` dims, `product(dims) × f64` values.
//! Optimiser moments are not stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{ModelParameters, NnError, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MELO";
const MAX_NAME: usize = 4096;
const MAX_RANK: usize = 8;

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(w: &mut W, kind: &str, params: &ModelParameters) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(kind.len() as u32).to_le_bytes())?;
    w.write_all(kind.as_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String, NnError> {
    if len > MAX_NAME {
        return Err(bad(format!("string length {len} too large")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    String::from_utf8(b).map_err(|_| bad("string is not UTF-8"))
}

/// Returns `(kind, parameters)`.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(String, ModelParameters), NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("missing magic bytes"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint (bad magic bytes)"));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind_len = read_u32(r)? as usize;
    let kind = read_string(r, kind_len)?;
    let mut params = ModelParameters::new();
    loop {
        let mut b = [0u8; 4];
        match r.read(&mut b[..1]) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
        r.read_exact(&mut b[1..]).map_err(|_| bad("truncated file"))?;
        let name = read_string(r, u32::from_le_bytes(b) as usize)?;
        let rank = read_u32(r)? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(bad(format!("parameter {name}: invalid rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let mut d = [0u8; 8];
            r.read_exact(&mut d).map_err(|_| bad("truncated file"))?;
            let d = usize::try_from(u64::from_le_bytes(d)).map_err(|_| bad("dimension overflow"))?;
            count = count.checked_mul(d).ok_or_else(|| bad("dimension overflow"))?;
            dims.push(d);
        }
        let mut raw = Vec::new();
        r.by_ref()
            .take(count as u64 * 8)
            .read_to_end(&mut raw)?;
        if raw.len() != count * 8 {
            return Err(bad(format!("parameter {name}: truncated data")));
        }
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|_| bad(format!("parameter {name}: non-finite value")))?;
        if params.contains(&name) {
            return Err(bad(format!("duplicate parameter {name}")));
        }
        params.insert(name, t);
    }
    Ok((kind, params))
}

pub fn save_checkpoint(path: &Path, kind: &str, params: &ModelParameters) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, kind, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(String, ModelParameters), NnError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
