//! The `CDMP` logits dump format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "CDMP" | version u32 = 1 | record_count u32
//! per record:
//!   n_positions u32 | vocab_size u32 | dtype u8 = 0 (f32)
//!   token_ids   n_positions x u32
//!   values      n_positions x vocab_size x f32, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CDMP";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Per-position logits of one tokenized sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsMatrix {
    token_ids: Vec<u32>,
    vocab_size: usize,
    values: Vec<f32>,
}

impl LogitsMatrix {
    /// Validates shape, finiteness and token id range.
    pub fn new(token_ids: Vec<u32>, vocab_size: usize, values: Vec<f32>) -> Result<Self> {
        let m = Self { token_ids, vocab_size, values };
        m.validate().map_err(|e| match e {
            Error::NonFiniteValue { position, column, .. } => Error::NonFiniteValue { record: 0, position, column },
            other => other,
        })?;
        Ok(m)
    }

    /// Builds a matrix from rows; handy in tests.
    pub fn from_rows(token_ids: Vec<u32>, rows: &[Vec<f32>]) -> Result<Self> {
        let vocab_size = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != vocab_size) {
            return Err(Error::InvalidMatrix { record: 0, reason: "ragged rows".into() });
        }
        Self::new(token_ids, vocab_size, rows.concat())
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidMatrix { record: 0, reason };
        if self.vocab_size == 0 {
            return Err(invalid("vocab_size must be at least 1".into()));
        }
        if self.vocab_size > u32::MAX as usize || self.token_ids.len() > u32::MAX as usize {
            return Err(invalid("dimension exceeds u32".into()));
        }
        if self.values.len() != self.token_ids.len() * self.vocab_size {
            return Err(invalid(format!(
                "{} values for {} positions x {} columns",
                self.values.len(),
                self.token_ids.len(),
                self.vocab_size
            )));
        }
        if let Some(&id) = self.token_ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(invalid(format!("token id {id} >= vocab_size {}", self.vocab_size)));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                record: 0,
                position: i / self.vocab_size,
                column: i % self.vocab_size,
            });
        }
        Ok(())
    }

    pub fn n_positions(&self) -> usize {
        self.token_ids.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, position: usize) -> &[f32] {
        let start = position * self.vocab_size;
        &self.values[start..start + self.vocab_size]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.values.chunks_exact(self.vocab_size)
    }
}

/// A sentence as seen by both models.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    pub text: String,
    pub student: LogitsMatrix,
    pub teacher: LogitsMatrix,
}

fn with_record(e: Error, record: usize) -> Error {
    match e {
        Error::InvalidMatrix { reason, .. } => Error::InvalidMatrix { record, reason },
        Error::NonFiniteValue { position, column, .. } => Error::NonFiniteValue { record, position, column },
        other => other,
    }
}

/// Serializes records to the dump layout. Fails before producing any bytes if
/// a record is invalid.
pub fn encode_dump(records: &[LogitsMatrix]) -> Result<Vec<u8>> {
    for (i, m) in records.iter().enumerate() {
        m.validate().map_err(|e| with_record(e, i))?;
    }
    if records.len() > u32::MAX as usize {
        return Err(Error::InvalidMatrix { record: 0, reason: "too many records".into() });
    }
    let payload: usize = records.iter().map(|m| 9 + 4 * m.token_ids.len() + 4 * m.values.len()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for m in records {
        out.extend_from_slice(&(m.n_positions() as u32).to_le_bytes());
        out.extend_from_slice(&(m.vocab_size as u32).to_le_bytes());
        out.push(DTYPE_F32);
        for id in &m.token_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for v in &m.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses a dump held in memory.
pub fn decode_dump(bytes: &[u8]) -> Result<Vec<LogitsMatrix>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(4).ok_or(Error::TruncatedPayload { record: 0 })?;
    if magic != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(magic);
        return Err(Error::BadMagic { found });
    }
    let version = cur.u32().ok_or(Error::TruncatedPayload { record: 0 })?;
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let count = cur.u32().ok_or(Error::TruncatedPayload { record: 0 })? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for record in 0..count {
        let truncated = Error::TruncatedPayload { record };
        let n_positions = cur.u32().ok_or(Error::TruncatedPayload { record })? as usize;
        let vocab_size = cur.u32().ok_or(Error::TruncatedPayload { record })? as usize;
        let dtype = cur.take(1).ok_or(Error::TruncatedPayload { record })?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype { record, dtype });
        }
        let n_values = n_positions.checked_mul(vocab_size).ok_or(Error::TruncatedPayload { record })?;
        let ids_bytes = cur.take(4 * n_positions).ok_or(Error::TruncatedPayload { record })?;
        let value_bytes = n_values.checked_mul(4).and_then(|n| cur.take(n)).ok_or(truncated)?;
        let token_ids = ids_bytes.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
        let values = value_bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let m = LogitsMatrix { token_ids, vocab_size, values };
        m.validate().map_err(|e| with_record(e, record))?;
        records.push(m);
    }
    if cur.pos != bytes.len() {
        return Err(Error::InvalidMatrix {
            record: count,
            reason: format!("{} trailing bytes after the last record", bytes.len() - cur.pos),
        });
    }
    Ok(records)
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<Vec<LogitsMatrix>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
    decode_dump(&bytes)
}

pub fn write_dump(records: &[LogitsMatrix], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_dump(records)?;
    let io = |source| Error::Io { path: path.to_owned(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)
}
