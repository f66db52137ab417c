//! Binary parameter checkpoints.
//!
//! ```text
//! magic        b"GSGP"
//! version      u32 LE
//! segments     u32 LE, then per segment: name_len u16, name bytes, offset u64, len u64
//! count        u64 LE
//! payload      count x f64 LE
//! crc32        u32 LE over everything above
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::{Layout, ParamVector, Segment};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSGP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(params: &ParamVector) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + params.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let segs = params.layout().segments();
    buf.extend_from_slice(&(segs.len() as u32).to_le_bytes());
    for s in segs {
        let name = s.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(s.offset as u64).to_le_bytes());
        buf.extend_from_slice(&(s.len as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamVector> {
    if bytes.len() < 4 + 4 + 4 + 8 + 4 {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut c = Cursor { data: body, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let nseg = c.u32()? as usize;
    let mut segments = Vec::with_capacity(nseg.min(1024));
    for _ in 0..nseg {
        let n = c.u16()? as usize;
        let name = String::from_utf8(c.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("segment name is not UTF-8".into()))?;
        let offset = c.u64()? as usize;
        let len = c.u64()? as usize;
        segments.push(Segment { name, offset, len });
    }
    let layout = Layout::from_segments(segments)?;
    let count = c.u64()? as usize;
    if count != layout.total() {
        return Err(Error::Checkpoint(format!(
            "payload has {count} values, layout needs {}",
            layout.total()
        )));
    }
    let raw = c.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("payload too large".into()))?)?;
    if c.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    let values = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ParamVector::from_values(layout, values)
}

pub fn save(params: &ParamVector, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamVector> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Loads `path` and checks that its layout matches `expected`.
pub fn load_matching(path: &Path, expected: &Layout) -> Result<ParamVector> {
    let p = load(path)?;
    if p.layout() != expected {
        return Err(Error::Checkpoint(format!(
            "{}: layout does not match the network",
            path.display()
        )));
    }
    Ok(p)
}
