//! Flat binary kernel cache.
//!
//! Layout: the ASCII magic `RFCK1`, `n` as a little-endian `u64`, `n²`
//! little-endian `f64` values in row-major order, then the provenance as JSON
//! up to the end of the file.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::{KernelMatrix, Provenance};
use crate::{Error, Result};

pub const MAGIC: &[u8; 5] = b"RFCK1";

pub fn encode(k: &KernelMatrix) -> Result<Vec<u8>> {
    let n = k.n();
    let m = k.matrix();
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + 8 * n * n + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for i in 0..n {
        for j in 0..n {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    serde_json::to_writer(&mut out, k.provenance())?;
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<KernelMatrix> {
    let header = MAGIC.len() + 8;
    if bytes.len() < header || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadCache("missing RFCK1 header".into()));
    }
    let n = u64::from_le_bytes(bytes[MAGIC.len()..header].try_into().expect("8 bytes"));
    let body = usize::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(n))
        .and_then(|nn| nn.checked_mul(8))
        .filter(|&len| len <= bytes.len() - header)
        .ok_or_else(|| Error::BadCache(format!("file too short for n = {n}")))?;
    let n = n as usize;
    let data = &bytes[header..header + body];
    let m = DMatrix::from_fn(n, n, |i, j| {
        let o = 8 * (i * n + j);
        f64::from_le_bytes(data[o..o + 8].try_into().expect("8 bytes"))
    });
    let provenance: Provenance = serde_json::from_slice(&bytes[header + body..])
        .map_err(|e| Error::BadCache(format!("provenance trailer: {e}")))?;
    if m != m.transpose() {
        return Err(Error::BadCache("matrix is not symmetric".into()));
    }
    Ok(KernelMatrix::with_provenance(m, provenance, None))
}

pub fn save(k: &KernelMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(k)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<KernelMatrix> {
    decode(&fs::read(path)?)
}
