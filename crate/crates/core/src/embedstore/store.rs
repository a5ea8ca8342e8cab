//! Binary embedding store.
//!
//! Little-endian layout:
//!
//! ```text
//! "PEMB" | u32 version | u32 dimension | u64 record_count
//! record*: u32 label_id | u16 patch_index (0xFFFF = text) | u16 id_len | id bytes | dimension × f32
//! ```
//!
//! A sidecar text file maps label ids to label strings, one `id<TAB>label`
//! pair per line.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{EmbeddingKey, EmbeddingRecord, EmbeddingVector, Slot};

pub const STORE_MAGIC: [u8; 4] = *b"PEMB";
pub const STORE_FORMAT_VERSION: u32 = 1;
pub const TEXT_SLOT: u16 = 0xFFFF;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported store version {found} (expected {STORE_FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated store: header declares {declared} records, {read} readable")]
    Truncated { declared: u64, read: u64 },
    #[error("store dimension {found} does not match expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("record {index}: {message}")]
    BadRecord { index: u64, message: String },
    #[error("duplicate key ({item_id}, {slot:?})")]
    DuplicateKey { item_id: String, slot: Slot },
    #[error("label table line {line}: {message}")]
    LabelTable { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub dimension: usize,
    pub records: Vec<EmbeddingRecord>,
}

pub fn save_store<W: Write>(
    mut out: W,
    dimension: usize,
    records: &[EmbeddingRecord],
) -> Result<(), StoreError> {
    let mut seen = HashSet::new();
    for (index, rec) in records.iter().enumerate() {
        if rec.vector.dimension() != dimension {
            return Err(StoreError::DimensionMismatch {
                expected: dimension,
                found: rec.vector.dimension(),
            });
        }
        if let Slot::Patch(p) = rec.key.slot {
            if p == TEXT_SLOT {
                return Err(StoreError::BadRecord {
                    index: index as u64,
                    message: "patch index 0xFFFF is reserved for text".into(),
                });
            }
        }
        if rec.key.item_id.len() > usize::from(u16::MAX) {
            return Err(StoreError::BadRecord {
                index: index as u64,
                message: "item id longer than 65535 bytes".into(),
            });
        }
        if !seen.insert((&rec.key.item_id, rec.key.slot)) {
            return Err(StoreError::DuplicateKey {
                item_id: rec.key.item_id.clone(),
                slot: rec.key.slot,
            });
        }
    }

    out.write_all(&STORE_MAGIC)?;
    out.write_all(&STORE_FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(dimension as u32).to_le_bytes())?;
    out.write_all(&(records.len() as u64).to_le_bytes())?;
    for rec in records {
        let slot = match rec.key.slot {
            Slot::Text => TEXT_SLOT,
            Slot::Patch(p) => p,
        };
        out.write_all(&rec.key.label_id.to_le_bytes())?;
        out.write_all(&slot.to_le_bytes())?;
        out.write_all(&(rec.key.item_id.len() as u16).to_le_bytes())?;
        out.write_all(rec.key.item_id.as_bytes())?;
        for v in rec.vector.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }
    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Read and validate a store. When `expected_dimension` is given, a store
/// of any other width is rejected.
pub fn load_store<R: Read>(
    mut input: R,
    expected_dimension: Option<usize>,
) -> Result<EmbeddingStore, StoreError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let truncated_header = || StoreError::Truncated { declared: 0, read: 0 };

    let magic: [u8; 4] = cur.take(4).ok_or_else(truncated_header)?.try_into().unwrap();
    if magic != STORE_MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    let version = cur.u32().ok_or_else(truncated_header)?;
    if version != STORE_FORMAT_VERSION {
        return Err(StoreError::VersionMismatch { found: version });
    }
    let dimension = cur.u32().ok_or_else(truncated_header)? as usize;
    if let Some(expected) = expected_dimension {
        if expected != dimension {
            return Err(StoreError::DimensionMismatch {
                expected,
                found: dimension,
            });
        }
    }
    let declared = cur.u64().ok_or_else(truncated_header)?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for index in 0..declared {
        let truncated = StoreError::Truncated { declared, read: index };
        let Some(label_id) = cur.u32() else { return Err(truncated) };
        let Some(slot_raw) = cur.u16() else { return Err(truncated) };
        let Some(id_len) = cur.u16() else { return Err(truncated) };
        let Some(id_bytes) = cur.take(usize::from(id_len)) else { return Err(truncated) };
        let Some(raw) = cur.take(dimension * 4) else { return Err(truncated) };
        let item_id = String::from_utf8(id_bytes.to_vec()).map_err(|_| StoreError::BadRecord {
            index,
            message: "item id is not UTF-8".into(),
        })?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let vector = EmbeddingVector::new(values).map_err(|_| StoreError::BadRecord {
            index,
            message: "non-finite value".into(),
        })?;
        let slot = if slot_raw == TEXT_SLOT {
            Slot::Text
        } else {
            Slot::Patch(slot_raw)
        };
        if !seen.insert((item_id.clone(), slot)) {
            return Err(StoreError::DuplicateKey { item_id, slot });
        }
        records.push(EmbeddingRecord {
            key: EmbeddingKey {
                item_id,
                slot,
                label_id,
            },
            vector,
        });
    }
    let rest = bytes.len() - cur.pos;
    if rest != 0 {
        return Err(StoreError::TrailingBytes(rest));
    }
    Ok(EmbeddingStore { dimension, records })
}

impl EmbeddingStore {
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let file = std::fs::File::create(path)?;
        save_store(io::BufWriter::new(file), self.dimension, &self.records)
    }

    pub fn open(path: &Path, expected_dimension: Option<usize>) -> Result<Self, StoreError> {
        load_store(io::BufReader::new(std::fs::File::open(path)?), expected_dimension)
    }
}

pub fn write_label_table<W: Write>(mut out: W, labels: &BTreeMap<u32, String>) -> io::Result<()> {
    for (id, label) in labels {
        writeln!(out, "{id}\t{label}")?;
    }
    out.flush()
}

pub fn read_label_table(text: &str) -> Result<BTreeMap<u32, String>, StoreError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: &str| StoreError::LabelTable {
            line: i + 1,
            message: message.into(),
        };
        let (id, label) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
        let id: u32 = id.trim().parse().map_err(|_| bad("label id is not an integer"))?;
        if label.is_empty() {
            return Err(bad("empty label"));
        }
        if out.insert(id, label.to_string()).is_some() {
            return Err(bad("duplicate label id"));
        }
    }
    Ok(out)
}
