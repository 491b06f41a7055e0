//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EVAE" | u32 version | u32 n | n bytes of key=value config text
//! u32 tensor count
//! per tensor: u32 name length | name | u32 rank | u64 dims[rank] | f64 data
//! ```

use std::fs;
use std::path::Path;

use super::{EvaeConfig, ModelState};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EVAE";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated checkpoint while reading {what} ({n} bytes needed)"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let at = self.pos as u64;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(at, format!("{what} is not UTF-8")))
    }
}

impl ModelState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let text = self.config.to_kv_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.params().len() as u32).to_le_bytes());
        for (name, t) in self.names().iter().zip(self.params()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad checkpoint magic (expected \"EVAE\")"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let text = r.string("config")?;
        let config = EvaeConfig::from_kv_text(&text)?;
        let count = r.u32("tensor count")?;
        let mut named = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let rank = r.u32("rank")?;
            let at = r.pos as u64;
            let shape = (0..rank)
                .map(|_| r.u64("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(at, format!("tensor '{name}' shape overflows")))?;
            let raw = r.take(
                n.checked_mul(8).ok_or_else(|| Error::format(at, "tensor too large"))?,
                "tensor data",
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            named.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after the last tensor"));
        }
        ModelState::from_named(config, named)
    }

    /// Writes the checkpoint atomically (temporary file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
