//! Versioned binary container shared by checkpoints and adapter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes   b"GLCK" (checkpoint) or b"GLAD" (adapters)
//! version      u32       currently 1
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON
//! n_tensors    u32
//! n_tensors × {
//!     name_len u32, name (UTF-8)
//!     flags    u8        bit 0 set = frozen
//!     rank     u32
//!     dims     rank × u64
//!     data     product(dims) × f64 (IEEE-754 bits)
//! }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const VERSION: u32 = 1;

/// One named tensor in a container.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub frozen: bool,
    pub tensor: Tensor,
}

pub fn encode<H: Serialize>(magic: &[u8; 4], header: &H, entries: &[Entry]) -> Result<Vec<u8>> {
    let header =
        serde_json::to_vec(header).map_err(|e| Error::data(format!("header encoding: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_len(&mut out, header.len())?;
    out.extend_from_slice(&header);
    put_len(&mut out, entries.len())?;
    for e in entries {
        put_len(&mut out, e.name.len())?;
        out.extend_from_slice(e.name.as_bytes());
        out.push(u8::from(e.frozen));
        put_len(&mut out, e.tensor.rank())?;
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::data("container field exceeds u32 range"))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::data(format!("container truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        usize::try_from(u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .map_err(|_| Error::data("tensor dimension overflows usize"))
    }
}

pub fn decode<H: DeserializeOwned>(magic: &[u8; 4], bytes: &[u8]) -> Result<(H, Vec<Entry>)> {
    let mut c = Cursor { bytes, pos: 0 };
    let found = c.take(4)?;
    if found != magic {
        return Err(Error::data(format!(
            "expected a {:?} container, found magic {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(found)
        )));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::data(format!(
            "unsupported container version {version}"
        )));
    }
    let header_len = c.u32()?;
    let header = serde_json::from_slice(c.take(header_len)?)
        .map_err(|e| Error::data(format!("container header: {e}")))?;
    let n = c.u32()?;
    let mut entries = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let name_len = c.u32()?;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::data("tensor name is not UTF-8"))?
            .to_string();
        let frozen = c.take(1)?[0] & 1 == 1;
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::data(format!("tensor {name} is too large")))?;
        let raw = c.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::data("tensor too large"))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let tensor =
            Tensor::new(shape, data).map_err(|e| Error::data(format!("tensor {name}: {e}")))?;
        entries.push(Entry {
            name,
            frozen,
            tensor,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::data(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - c.pos
        )));
    }
    Ok((header, entries))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Removes the entry called `name`.
pub fn take_entry(entries: &mut Vec<Entry>, name: &str) -> Result<Entry> {
    let pos = entries
        .iter()
        .position(|e| e.name == name)
        .ok_or_else(|| Error::data(format!("container has no tensor named {name}")))?;
    Ok(entries.remove(pos))
}
