//! Named-parameter checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//! `"MGRC"`, version, element width in bytes, entry count, then per entry:
//! name length, UTF-8 name, rank, extents, values as little-endian floats.

use std::fs;
use std::path::Path;

use crate::array::DiffArray;
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::real::Real;

const MAGIC: &[u8; 4] = b"MGRC";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{what} {x} exceeds u32")))
}

pub fn write_checkpoint<T: Real>(store: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + store.num_values() * T::BYTES);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, T::BYTES as u32);
    put_u32(&mut out, to_u32(store.len(), "parameter count")?);
    for p in store.iter() {
        put_u32(&mut out, to_u32(p.name.len(), "name length")?);
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.array.shape();
        put_u32(&mut out, to_u32(shape.len(), "rank")?);
        for &d in shape {
            put_u32(&mut out, to_u32(d, "extent")?);
        }
        for &v in p.array.values() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated: needed {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_checkpoint<T: Real>(bytes: &[u8]) -> Result<Vec<(String, DiffArray<T>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let width = r.u32()? as usize;
    if width != T::BYTES {
        return Err(Error::Format(format!(
            "element width {width} does not match requested {}",
            T::BYTES
        )));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * width)?;
        let values = raw.chunks_exact(width).map(T::read_le).collect();
        entries.push((name, DiffArray::new(&shape, values)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last entry",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(store)?)?;
    Ok(())
}

/// Overwrites the values of `store` from a checkpoint. The file must hold
/// exactly the store's parameter names with identical shapes.
pub fn load_checkpoint<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let entries = read_checkpoint::<T>(&fs::read(path)?)?;
    if entries.len() != store.len() {
        return Err(Error::Format(format!(
            "{} holds {} parameters, model has {}",
            path.display(),
            entries.len(),
            store.len()
        )));
    }
    for (name, array) in entries {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
        let p = store.get_mut(id);
        if p.array.shape() != array.shape() {
            return Err(Error::shape(
                "load_checkpoint",
                p.array.shape(),
                array.shape(),
            ));
        }
        p.array.values_mut().copy_from_slice(array.values());
    }
    Ok(())
}
