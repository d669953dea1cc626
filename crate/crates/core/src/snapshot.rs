//! Binary snapshot codec for [`VectorIndex`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "RAG3DIDX"
//! version  u16
//! dim      u32      (0 when the index never fixed a dimension)
//! count    u64
//! count × { id_len u16, id UTF-8 bytes, dim × f64 }
//! crc32    u32      CRC-32/IEEE of every preceding byte
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::embedding::EmbeddingVector;
use crate::index::{IndexError, IndexRecord, VectorIndex};

pub const MAGIC: &[u8; 8] = b"RAG3DIDX";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 8 + 2 + 4 + 8;
const CRC_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u16),
    #[error("snapshot truncated")]
    Truncated,
    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("record {0} has an id that is not valid UTF-8")]
    InvalidId(u64),
    #[error("entry id `{0}` longer than 65535 bytes")]
    IdTooLong(String),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("inconsistent records: {0}")]
    Inconsistent(IndexError),
}

pub fn encode(index: &VectorIndex) -> Result<Vec<u8>, SnapshotError> {
    let dim = index.dim().unwrap_or(0);
    let mut out = Vec::with_capacity(HEADER_LEN + index.len() * (2 + 16 + dim * 8) + CRC_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for (pos, id) in index.ids().enumerate() {
        let id_len =
            u16::try_from(id.len()).map_err(|_| SnapshotError::IdTooLong(String::from(id)))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for v in index.vector_at(pos).unwrap_or(&[]) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos.checked_add(n).ok_or(SnapshotError::Truncated)?;
        let slice = self
            .buf
            .get(self.pos..end)
            .ok_or(SnapshotError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, SnapshotError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<VectorIndex, SnapshotError> {
    if bytes.len() < MAGIC.len() {
        return Err(SnapshotError::Truncated);
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(SnapshotError::Truncated);
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - CRC_LEN);

    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(SnapshotError::UnsupportedVersion(version));
    }
    let dim = r.u32()? as usize;
    let count = r.u64()?;

    // Check the checksum before trusting any record framing; a truncated
    // file almost always fails here.
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        let min_record = 2 + dim * 8;
        if (count as u128) * (min_record as u128) > r.remaining() as u128 {
            return Err(SnapshotError::Truncated);
        }
        return Err(SnapshotError::ChecksumMismatch { stored, computed });
    }

    let mut index = if dim == 0 {
        VectorIndex::new()
    } else {
        VectorIndex::with_dim(dim)
    };
    for n in 0..count {
        let id_len = r.u16()? as usize;
        let id = core::str::from_utf8(r.take(id_len)?).map_err(|_| SnapshotError::InvalidId(n))?;
        let raw = r.take(dim * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        index
            .insert(IndexRecord::new(id, EmbeddingVector::from_stored(values)))
            .map_err(SnapshotError::Inconsistent)?;
    }
    if r.remaining() != 0 {
        return Err(SnapshotError::TrailingBytes(r.remaining()));
    }
    Ok(index)
}
