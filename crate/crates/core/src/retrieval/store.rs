//! Binary index file.
//!
//! ```text
//! header  : magic "FLIX" | version u16 | reserved u16 | dimension u32 | count u64
//! record  : id_len u32 | id (utf-8) | text_len u32 | text (utf-8) | dimension × f32
//! ```
//!
//! All integers and floats are little-endian.

use std::io::Write;
use std::path::Path;

use super::{EmbeddingVector, IndexEntry, PassageIndex, RetrievalError};

pub const MAGIC: [u8; 4] = *b"FLIX";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

pub fn encode(index: &PassageIndex) -> Vec<u8> {
    let dim = index.dimension();
    let mut out = Vec::with_capacity(HEADER_LEN + index.len() * (dim * 4 + 64));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for e in index.entries() {
        for s in [&e.passage_id, &e.text] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for x in e.vector.values() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], RetrievalError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                RetrievalError::Format(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16, RetrievalError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, RetrievalError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, RetrievalError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, RetrievalError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| RetrievalError::Format(format!("{what} is not valid UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<PassageIndex, RetrievalError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(RetrievalError::Format("bad magic".into()));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(RetrievalError::Format(format!(
            "unsupported version {version}"
        )));
    }
    cur.u16("reserved")?;
    let dim = cur.u32("dimension")? as usize;
    let count = cur.u64("count")?;
    if count == 0 {
        return Err(RetrievalError::EmptyCorpus);
    }
    // Each record needs at least 8 bytes of lengths plus the vector.
    let min_record = 8 + dim * 4;
    if (count as u128) * (min_record as u128) > (bytes.len() - HEADER_LEN) as u128 {
        return Err(RetrievalError::Format(format!(
            "count {count} exceeds file size"
        )));
    }
    let mut entries = Vec::with_capacity(count as usize);
    for n in 0..count {
        let passage_id = cur.string(&format!("id of record {n}"))?;
        let text = cur.string(&format!("text of record {n}"))?;
        let raw = cur.take(dim * 4, &format!("vector of record {n}"))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let vector = EmbeddingVector::new(values)
            .map_err(|_| RetrievalError::Format(format!("non-finite value in record {n}")))?;
        entries.push(IndexEntry {
            passage_id,
            text,
            vector,
        });
    }
    if cur.pos != bytes.len() {
        return Err(RetrievalError::Format(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    PassageIndex::from_entries(entries)
}

pub fn write_index(index: &PassageIndex, path: &Path) -> Result<(), RetrievalError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&encode(index))?;
    file.flush()?;
    Ok(())
}

pub fn read_index(path: &Path) -> Result<PassageIndex, RetrievalError> {
    decode(&std::fs::read(path)?)
}
