use std::collections::HashMap;
use std::path::Path;

use super::store::{read_label_table, EmbeddingStore};
use super::{EmbeddingProvider, EmbeddingVector, LabelRef, ProviderError, Slot};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Read-only provider over an exported [`EmbeddingStore`].
///
/// Text vectors are looked up by label. When a label table is supplied the
/// label string decides which stored label id to use; otherwise the caller's
/// label id is taken as-is.
#[derive(Debug)]
pub struct FileProvider {
    dimension: usize,
    text: HashMap<u32, EmbeddingVector>,
    patches: HashMap<String, Vec<Option<EmbeddingVector>>>,
    label_ids: Option<HashMap<String, u32>>,
}

impl FileProvider {
    pub fn open(store: &Path, labels: Option<&Path>) -> Result<Self> {
        let store = EmbeddingStore::open(store, None)?;
        let table = match labels {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Some(read_label_table(&text)?)
            }
            None => None,
        };
        Ok(Self::from_store(store, table.map(|t| t.into_iter().map(|(id, l)| (l, id)).collect())))
    }

    pub fn from_store(store: EmbeddingStore, label_ids: Option<HashMap<String, u32>>) -> Self {
        let mut text = HashMap::new();
        let mut patches: HashMap<String, Vec<Option<EmbeddingVector>>> = HashMap::new();
        for rec in store.records {
            match rec.key.slot {
                Slot::Text => {
                    text.insert(rec.key.label_id, rec.vector);
                }
                Slot::Patch(p) => {
                    let slots = patches.entry(rec.key.item_id).or_default();
                    let p = usize::from(p);
                    if slots.len() <= p {
                        slots.resize(p + 1, None);
                    }
                    slots[p] = Some(rec.vector);
                }
            }
        }
        Self {
            dimension: store.dimension,
            text,
            patches,
            label_ids,
        }
    }

    fn resolve_label(&self, label: LabelRef<'_>) -> Result<u32, ProviderError> {
        match &self.label_ids {
            Some(map) => map
                .get(label.name)
                .copied()
                .ok_or_else(|| ProviderError::Missing(format!("label `{}` in label table", label.name))),
            None => Ok(label.id),
        }
    }
}

impl EmbeddingProvider for FileProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn text_embedding(&self, label: LabelRef<'_>) -> Result<EmbeddingVector, ProviderError> {
        let id = self.resolve_label(label)?;
        self.text
            .get(&id)
            .cloned()
            .ok_or_else(|| ProviderError::Missing(format!("text record for label {id} ({})", label.name)))
    }

    fn patch_embeddings(
        &self,
        item_id: &str,
        _label: LabelRef<'_>,
        _image: Option<&ImageTensor>,
        grid: usize,
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let slots = self
            .patches
            .get(item_id)
            .ok_or_else(|| ProviderError::Missing(format!("patch records for item `{item_id}`")))?;
        (0..grid * grid)
            .map(|p| {
                slots
                    .get(p)
                    .and_then(|v| v.clone())
                    .ok_or_else(|| ProviderError::Missing(format!("patch {p} of item `{item_id}`")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::{save_store, EmbeddingKey, EmbeddingRecord};

    fn provider() -> FileProvider {
        let mut records = vec![EmbeddingRecord {
            key: EmbeddingKey {
                item_id: "deer".into(),
                slot: Slot::Text,
                label_id: 2,
            },
            vector: EmbeddingVector::new(vec![1.0, 0.0]).unwrap(),
        }];
        for p in 0..4u16 {
            records.push(EmbeddingRecord {
                key: EmbeddingKey {
                    item_id: "a.png".into(),
                    slot: Slot::Patch(p),
                    label_id: 2,
                },
                vector: EmbeddingVector::new(vec![f32::from(p), 1.0]).unwrap(),
            });
        }
        let mut buf = Vec::new();
        save_store(&mut buf, 2, &records).unwrap();
        let store = crate::embedstore::load_store(&buf[..], Some(2)).unwrap();
        FileProvider::from_store(store, None)
    }

    #[test]
    fn lookups() {
        let p = provider();
        let deer = LabelRef { id: 2, name: "deer" };
        assert_eq!(p.text_embedding(deer).unwrap().as_slice(), &[1.0, 0.0]);
        let patches = p.patch_embeddings("a.png", deer, None, 2).unwrap();
        assert_eq!(patches.len(), 4);
        assert_eq!(patches[3].as_slice(), &[3.0, 1.0]);
        assert_eq!(p.patch_embeddings("a.png", deer, None, 1).unwrap().len(), 1);
    }

    #[test]
    fn absent_records_are_missing() {
        let p = provider();
        let cat = LabelRef { id: 5, name: "cat" };
        assert!(matches!(p.text_embedding(cat), Err(ProviderError::Missing(_))));
        assert!(matches!(
            p.patch_embeddings("b.png", cat, None, 2),
            Err(ProviderError::Missing(_))
        ));
        assert!(matches!(
            p.patch_embeddings("a.png", cat, None, 3),
            Err(ProviderError::Missing(_))
        ));
    }

    #[test]
    fn label_table_redirects_ids() {
        let mut p = provider();
        p.label_ids = Some([("deer".to_string(), 2u32)].into());
        assert!(p.text_embedding(LabelRef { id: 0, name: "deer" }).is_ok());
        assert!(p.text_embedding(LabelRef { id: 2, name: "elk" }).is_err());
    }
}
