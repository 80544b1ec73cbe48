//! Binary tensor container used for datasets, checkpoints, embeddings and
//! exported attention maps.
//!
//! Layout, all multi-byte fields little-endian:
//!
//! ```text
//! magic   4 bytes  "FGRD"
//! version u16      currently 1
//! count   u32      number of tensors
//! then per tensor:
//!   name_len u16, name (UTF-8), rank u8, rank x u32 extents,
//!   product(extents) x f32 values
//! ```
//!
//! The reader never trusts a declared length: every read is bounds-checked
//! against the remaining input, extents must be positive, their product is
//! computed with overflow checks and validated against the bytes actually
//! present before any allocation, and trailing bytes after the last tensor
//! are rejected. A version newer than this build is reported as such rather
//! than as corruption.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FGRD";
pub const VERSION: u16 = 1;

/// An ordered, name-keyed collection of tensors. Order is insertion order
/// and is preserved on disk, so identical insert sequences produce
/// byte-identical files.
#[derive(Default, Clone)]
pub struct TensorArchive {
    entries: Vec<(String, Tensor)>,
}

impl TensorArchive {
    pub fn new() -> TensorArchive {
        TensorArchive::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if name.is_empty() {
            return Err(Error::invalid("tensor name must not be empty".to_string()));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("tensor name of {} bytes is too long", name.len())));
        }
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::invalid(format!("duplicate tensor name {name:?}")));
        }
        tensor.ensure_finite(name)?;
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`get`](Self::get) but failing loudly with the archive's
    /// vocabulary, for required entries.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("archive is missing tensor {name:?}")))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::invalid("too many tensors for one archive".to_string()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, tensor) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(tensor.rank())
                .map_err(|_| Error::invalid(format!("tensor {name:?} rank exceeds 255")))?;
            out.push(rank);
            for &d in tensor.dims() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::invalid(format!("tensor {name:?} extent exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TensorArchive> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format("bad magic, not a tensor archive".to_string()));
        }
        let version = r.u16("version")?;
        if version > VERSION {
            return Err(Error::UnsupportedVersion { found: version, supported: VERSION });
        }
        let count = r.u32("tensor count")?;
        let mut archive = TensorArchive::new();
        for i in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name_bytes = r.take(name_len, "tensor name")?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| Error::Corrupt(format!("tensor {i} name is not UTF-8")))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            let mut len: u64 = 1;
            for _ in 0..rank {
                let d = r.u32("extent")?;
                if d == 0 {
                    return Err(Error::Corrupt(format!("tensor {name:?} has a zero extent")));
                }
                len = len
                    .checked_mul(d as u64)
                    .ok_or_else(|| Error::Corrupt(format!("tensor {name:?} extents overflow")))?;
                dims.push(d as usize);
            }
            let payload = len
                .checked_mul(4)
                .ok_or_else(|| Error::Corrupt(format!("tensor {name:?} payload overflows")))?;
            if payload > (r.bytes.len() - r.pos) as u64 {
                return Err(Error::Corrupt(format!(
                    "tensor {name:?} declares {payload} payload bytes, {} remain",
                    r.bytes.len() - r.pos
                )));
            }
            let raw = r.take(payload as usize, "payload")?;
            let mut data = Vec::with_capacity(len as usize);
            for chunk in raw.chunks_exact(4) {
                let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                if !v.is_finite() {
                    return Err(Error::Corrupt(format!("tensor {name:?} holds a non-finite value")));
                }
                data.push(v as f64);
            }
            let tensor = Tensor::from_vec(&dims, data)
                .map_err(|e| Error::Corrupt(format!("tensor {name:?}: {e}")))?;
            archive.insert(&name, tensor).map_err(|e| Error::Corrupt(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(archive)
    }

    pub fn load(path: &Path) -> Result<TensorArchive> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        TensorArchive::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated while reading {what} ({} of {n} bytes left)",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
