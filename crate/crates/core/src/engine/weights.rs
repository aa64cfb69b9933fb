//! `YWTS` named-tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "YWTS" | version: u32 | count: u64
//! count × ( name_len: u32 | name: UTF-8 | rank: u32 | extents: rank × u64 | values: numel × f32 )
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::util;
use crate::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"YWTS";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn write_weights<'a, W: Write>(
    mut w: W,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> std::io::Result<()> {
    let entries: Vec<_> = entries.into_iter().collect();
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for e in t.shape() {
            w.write_all(&(*e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("weight file truncated while reading {what}: {e}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_weights<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format(format!(
            "bad weight-file magic {magic:?}, expected \"YWTS\""
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight-file version {version}"
        )));
    }
    let count = read_u64(&mut r, "count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r, "name length")? as usize;
        let mut name = vec![0u8; len];
        read_exact(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, "extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        read_exact(&mut r, &mut raw, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

pub fn save_weights<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<()> {
    let w = util::create(path)?;
    write_weights(w, entries).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    read_weights(util::open(path)?)
}

impl ParamStore<f32> {
    /// Every parameter and buffer, in store order.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.iter().map(|(_, p)| (p.name.as_str(), &p.tensor))
    }
}
