//! Line-delimited dataset manifest.
//!
//! Each non-comment line is a flat JSON object with string fields `path`
//! and `label`. Lines starting with `#` and blank lines are ignored.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    /// Hex SHA-256 of the raw manifest bytes.
    pub digest: String,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let record: ManifestRecord =
                serde_json::from_str(trimmed).map_err(|e| Error::Manifest {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            if record.label.is_empty() {
                return Err(Error::Manifest {
                    line: lineno + 1,
                    message: "empty label".into(),
                });
            }
            records.push(record);
        }
        Ok(Self {
            records,
            digest: digest_bytes(text.as_bytes()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serialize back to the line format.
    pub fn to_text(records: &[ManifestRecord]) -> String {
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(r).expect("manifest record serializes"));
            out.push('\n');
        }
        out
    }

    /// Distinct labels in sorted order; the position is the class id.
    pub fn labels(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Build a manifest of `per_class` placeholder items for each of
/// `num_classes` labels. Paths are not backed by files; they are consumed
/// by the synthetic image source.
pub fn synthetic_records(num_classes: usize, per_class: usize) -> Vec<ManifestRecord> {
    let mut records = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        let label = format!("class_{c:03}");
        for i in 0..per_class {
            records.push(ManifestRecord {
                path: format!("synthetic/{label}/{i:05}.png"),
                label: label.clone(),
            });
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_skips_comments() {
        let text = "# header\n{\"path\":\"a.png\",\"label\":\"deer\"}\n\n{\"path\":\"b.png\",\"label\":\"cat\"}\n";
        let m = Manifest::parse(text).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.labels(), vec!["cat".to_string(), "deer".to_string()]);
        assert_eq!(m.digest.len(), 64);
    }

    #[test]
    fn reports_bad_line() {
        let err = Manifest::parse("{\"path\":\"a\"}\n").unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 1, .. }));
    }

    #[test]
    fn text_round_trip() {
        let recs = synthetic_records(3, 2);
        let m = Manifest::parse(&Manifest::to_text(&recs)).unwrap();
        assert_eq!(m.records, recs);
    }
}
