//! Flat binary parameter container.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        8 bytes   "UDCKPT\0\0"
//! version      u32       CHECKPOINT_VERSION
//! arch_hash    32 bytes  SHA-256 of the architecture description
//! entry_count  u32
//! entries      entry_count × {
//!                name_len u32, name (UTF-8),
//!                ndim u32, dims u64 × ndim,
//!                offset u64   (in f64 elements from the start of `data`)
//!              }
//! data_len     u64       number of f64 values
//! data         f64 × data_len
//! ```

use super::{DiffError, DiffTensor};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"UDCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch_hash: [u8; 32],
    pub tensors: Vec<(String, DiffTensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DiffError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| DiffError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, DiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize, DiffError> {
        usize::try_from(self.u64()?).map_err(|_| DiffError::Checkpoint("size overflow".into()))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.arch_hash);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += t.numel() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DiffError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(DiffError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(DiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let arch_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| DiffError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
            let offset = r.usize()?;
            manifest.push((name, dims, offset));
        }
        let data_len = r.usize()?;
        let raw = r.take(data_len.checked_mul(8).ok_or_else(|| DiffError::Checkpoint("size overflow".into()))?)?;
        if r.pos != bytes.len() {
            return Err(DiffError::Checkpoint("trailing bytes".into()));
        }
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, dims, offset) in manifest {
            let numel: usize = dims.iter().product();
            let slice = offset
                .checked_add(numel)
                .and_then(|end| data.get(offset..end))
                .ok_or_else(|| DiffError::Checkpoint(format!("tensor `{name}` out of bounds")))?;
            let t = DiffTensor::new(dims, slice.to_vec())
                .map_err(|e| DiffError::Checkpoint(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        Ok(Self { arch_hash, tensors })
    }
}
