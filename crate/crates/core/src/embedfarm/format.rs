//! SEF1 portable collection format.
//!
//! ```text
//! "SEF1" | u16 version | u8 metric | u32 dim | u64 count
//! count × ( u16 key_len | key | u16 tag_count | tag_count × (u16 len | tag) | dim × f32 )
//! 32-byte SHA-256 of everything before it
//! ```
//!
//! All integers and floats are little-endian; entries are sorted by key and
//! tags within an entry are sorted, so equal contents give equal bytes.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use super::metric::Metric;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SEF1";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8;
const TRAILER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SefEntry {
    pub key: String,
    pub tags: BTreeSet<String>,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SefFile {
    pub metric: Metric,
    pub dim: usize,
    pub entries: Vec<SefEntry>,
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::invalid("string longer than 65535 bytes"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode(file: &SefFile) -> Result<Vec<u8>> {
    let dim = u32::try_from(file.dim).map_err(|_| Error::invalid("dimension too large"))?;
    let mut entries: Vec<&SefEntry> = file.entries.iter().collect();
    entries.sort_by(|a, b| a.key.cmp(&b.key));
    let mut out = Vec::with_capacity(HEADER_LEN + entries.len() * (16 + file.dim * 4) + TRAILER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(file.metric.code());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        if e.vector.len() != file.dim {
            return Err(Error::invalid(format!("entry {:?} has wrong dimension", e.key)));
        }
        put_str(&mut out, &e.key)?;
        let tag_count = u16::try_from(e.tags.len()).map_err(|_| Error::invalid("too many tags"))?;
        out.extend_from_slice(&tag_count.to_le_bytes());
        for t in &e.tags {
            put_str(&mut out, t)?;
        }
        for v in &e.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::invalid("truncated SEF1 body"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::invalid("non-UTF-8 string in SEF1 body"))
    }
}

/// Decodes and verifies a SEF1 file. A checksum mismatch is an integrity
/// error; a well-checksummed but malformed body is invalid input.
pub fn decode(bytes: &[u8]) -> Result<SefFile> {
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(Error::Integrity("SEF1 file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(Error::Integrity("SEF1 checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::invalid("not a SEF1 file"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::invalid(format!("unsupported SEF1 version {version}")));
    }
    let metric_code = r.take(1)?[0];
    let metric = Metric::from_code(metric_code).ok_or_else(|| Error::invalid(format!("unknown metric code {metric_code}")))?;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let count = r.u64()?;
    let mut entries = Vec::new();
    let mut prev: Option<String> = None;
    for _ in 0..count {
        let key = r.string()?;
        if prev.as_ref().is_some_and(|p| *p >= key) {
            return Err(Error::invalid("SEF1 entries not strictly sorted by key"));
        }
        let tag_count = r.u16()?;
        let mut tags = BTreeSet::new();
        for _ in 0..tag_count {
            tags.insert(r.string()?);
        }
        let raw = r.take(dim * 4)?;
        let vector = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        prev = Some(key.clone());
        entries.push(SefEntry { key, tags, vector });
    }
    if r.pos != body.len() {
        return Err(Error::invalid("trailing bytes after SEF1 entries"));
    }
    Ok(SefFile { metric, dim, entries })
}
