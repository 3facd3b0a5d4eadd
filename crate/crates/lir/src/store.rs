//! Append-only representation store.
//!
//! Each record pins the reduced vector and knowledge texts for one
//! `(user, partition)` key. Keys are immutable: writing an existing key is
//! an error, which is what makes warm replays free. The file is a bare
//! record sequence; an in-memory index is rebuilt on open, and a torn final
//! record (crash during append) is truncated away.
//!
//! Record layout, all integers little-endian:
//!
//! ```text
//! [record_len u32]
//!   [user_id len u32][user_id bytes]
//!   [partition_index u32]
//!   [stage u8]
//!   [vector dim u32][f64 × dim]
//!   [summary len u32][summary bytes]
//!   [shift len u32][shift bytes]      (len 0 ⇔ shift absent)
//! ```

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::binio::{ByteReader, ByteWriter};
use crate::encoding::{KnowledgeVector, Stage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StoreRecord {
    pub user_id: String,
    pub partition_index: u32,
    pub stage: Stage,
    pub values: Vec<f64>,
    pub summary: String,
    /// Absent exactly for first partitions.
    pub shift: Option<String>,
}

impl StoreRecord {
    pub fn vector(&self) -> KnowledgeVector {
        KnowledgeVector {
            user_id: self.user_id.clone(),
            partition_index: self.partition_index,
            values: self.values.clone(),
            stage: self.stage,
        }
    }
}

fn encode_record(rec: &StoreRecord) -> Vec<u8> {
    let mut body = ByteWriter::new();
    body.put_prefixed_str(&rec.user_id);
    body.put_u32(rec.partition_index);
    body.put_u8(rec.stage.to_byte());
    body.put_u32(rec.values.len() as u32);
    body.put_f64_slice(&rec.values);
    body.put_prefixed_str(&rec.summary);
    body.put_prefixed_str(rec.shift.as_deref().unwrap_or(""));
    let body = body.into_bytes();
    let mut out = ByteWriter::new();
    out.put_u32(body.len() as u32);
    let mut bytes = out.into_bytes();
    bytes.extend_from_slice(&body);
    bytes
}

fn decode_record(body: &[u8]) -> Result<StoreRecord> {
    let mut r = ByteReader::new(body);
    let user_id = r.read_prefixed_str("user id")?.to_string();
    let partition_index = r.read_u32("partition index")?;
    let stage = Stage::from_byte(r.read_u8("stage")?)?;
    let dim = r.read_u32("vector dim")? as usize;
    let values = r.read_f64_vec(dim, "vector values")?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("stored vector holds non-finite values".into()));
    }
    let summary = r.read_prefixed_str("summary")?.to_string();
    let shift_text = r.read_prefixed_str("shift")?;
    if !r.is_empty() {
        return Err(Error::Format(format!(
            "{} stray bytes inside a store record",
            r.remaining()
        )));
    }
    Ok(StoreRecord {
        user_id,
        partition_index,
        stage,
        values,
        summary,
        shift: if shift_text.is_empty() {
            None
        } else {
            Some(shift_text.to_string())
        },
    })
}

/// Decodes a record sequence. Returns the records plus the number of bytes
/// that form complete records; trailing bytes beyond that are a torn final
/// append. A structurally invalid *complete* record is a hard error.
pub fn decode_records(bytes: &[u8]) -> Result<(Vec<StoreRecord>, usize)> {
    let mut records = Vec::new();
    let mut pos = 0usize;
    while bytes.len() - pos >= 4 {
        let len = u32::from_le_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]])
            as usize;
        if bytes.len() - pos - 4 < len {
            break; // torn tail
        }
        let body = &bytes[pos + 4..pos + 4 + len];
        records.push(decode_record(body)?);
        pos += 4 + len;
    }
    Ok((records, pos))
}

#[derive(Debug)]
pub struct RepresentationStore {
    path: PathBuf,
    file: File,
    index: HashMap<(String, u32), StoreRecord>,
    /// Keys in append order, for deterministic iteration.
    order: Vec<(String, u32)>,
    writes: u64,
}

impl RepresentationStore {
    /// Opens (creating if missing) a store file, rebuilding the in-memory
    /// index. A torn final record is truncated away; a corrupt record in
    /// the middle of the file is a hard error.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let (records, valid_len) = decode_records(&bytes)?;
        if valid_len < bytes.len() {
            // recover from a torn append by dropping the tail
            let file = OpenOptions::new().write(true).open(&path)?;
            file.set_len(valid_len as u64)?;
        }
        let mut index = HashMap::new();
        let mut order = Vec::new();
        for rec in records {
            let key = (rec.user_id.clone(), rec.partition_index);
            if index.insert(key.clone(), rec).is_some() {
                return Err(Error::Format(format!(
                    "duplicate store key ({}, {})",
                    key.0, key.1
                )));
            }
            order.push(key);
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(RepresentationStore {
            path,
            file,
            index,
            order,
            writes: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Appends performed through this handle (not counting records already
    /// on disk when it was opened).
    pub fn write_count(&self) -> u64 {
        self.writes
    }

    pub fn contains(&self, user_id: &str, partition_index: u32) -> bool {
        self.index
            .contains_key(&(user_id.to_string(), partition_index))
    }

    pub fn get(&self, user_id: &str, partition_index: u32) -> Option<&StoreRecord> {
        self.index.get(&(user_id.to_string(), partition_index))
    }

    /// All records for a user, ordered by partition index.
    pub fn user_records(&self, user_id: &str) -> Vec<&StoreRecord> {
        let mut records: Vec<&StoreRecord> = self
            .index
            .iter()
            .filter(|((u, _), _)| u == user_id)
            .map(|(_, rec)| rec)
            .collect();
        records.sort_by_key(|r| r.partition_index);
        records
    }

    /// Appends one record. Keys are write-once; overwriting is rejected.
    pub fn put(&mut self, rec: StoreRecord) -> Result<()> {
        if rec.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "vector for ({}, {})",
                rec.user_id, rec.partition_index
            )));
        }
        let key = (rec.user_id.clone(), rec.partition_index);
        if self.index.contains_key(&key) {
            return Err(Error::Precondition(format!(
                "store key ({}, {}) already written; partitions are immutable",
                key.0, key.1
            )));
        }
        let bytes = encode_record(&rec);
        self.file.write_all(&bytes)?;
        self.file.flush()?;
        self.index.insert(key.clone(), rec);
        self.order.push(key);
        self.writes += 1;
        Ok(())
    }
}
