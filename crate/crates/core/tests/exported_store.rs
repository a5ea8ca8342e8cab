use std::collections::BTreeMap;
use std::fs::File;

use panda_core::embedstore::{
    write_label_table, EmbeddingKey, EmbeddingProvider, EmbeddingRecord, EmbeddingStore, LabelRef, ProviderConfig,
    Slot, SyntheticProvider,
};
use panda_core::run::{RunConfig, Session};
use panda_core::seed::{self, tags};

fn config() -> RunConfig {
    let mut cfg = RunConfig::from_toml(
        r#"
output_dir = "unused"
seed = 7
[stream]
num_classes = 12
n_max = 30
rho = 0.1
num_tasks = 3
[provider]
kind = "synthetic"
dimension = 24
background_scale = 5.0
[images]
resolution = 32
"#,
    )
    .unwrap();
    cfg.patcher.persist_images = false;
    cfg
}

/// Dump every vector the synthetic run can ask for into a store file.
fn export(session: &Session, dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let cfg = &session.config;
    let ProviderConfig::Synthetic {
        dimension,
        sigma,
        foreground_fraction,
        background_scale,
    } = cfg.provider.clone()
    else {
        unreachable!()
    };
    let provider = SyntheticProvider::new(
        seed::derive(cfg.seed, tags::PROVIDER),
        dimension,
        sigma,
        foreground_fraction,
        background_scale,
    );
    let labels = &session.plan.labels;
    let mut records = Vec::new();
    let mut table = BTreeMap::new();
    for (id, name) in labels.iter().enumerate() {
        let label = LabelRef { id: id as u32, name };
        table.insert(id as u32, name.clone());
        records.push(EmbeddingRecord {
            key: EmbeddingKey {
                item_id: name.clone(),
                slot: Slot::Text,
                label_id: id as u32,
            },
            vector: provider.text_embedding(label).unwrap(),
        });
    }
    for task in &session.tasks {
        for item in task.train.iter().chain(&task.test) {
            let label = LabelRef {
                id: item.label_id,
                name: &labels[item.label_id as usize],
            };
            let patches = provider
                .patch_embeddings(&item.item_id, label, None, session.grid.side)
                .unwrap();
            for (p, vector) in patches.into_iter().enumerate() {
                records.push(EmbeddingRecord {
                    key: EmbeddingKey {
                        item_id: item.item_id.clone(),
                        slot: Slot::Patch(p as u16),
                        label_id: item.label_id,
                    },
                    vector,
                });
            }
        }
    }
    let store = dir.join("embeddings.bin");
    let table_path = dir.join("labels.tsv");
    EmbeddingStore { dimension, records }.save(&store).unwrap();
    write_label_table(File::create(&table_path).unwrap(), &table).unwrap();
    (store, table_path)
}

#[test]
fn file_store_reproduces_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut live = Session::from_config(config()).unwrap();
    let baseline = live.run_baseline().unwrap();
    let panda = live.run_panda(None).unwrap();
    assert!(panda.report.synthesized() > 0);

    let (store, labels) = export(&live, dir.path());
    let reopened = EmbeddingStore::open(&store, Some(24)).unwrap();
    assert_eq!(reopened.records.len(), 12 + live.tasks.iter().map(|t| t.train.len() + t.test.len()).sum::<usize>() * 16);

    let mut cfg = config();
    cfg.provider = ProviderConfig::File {
        store,
        labels: Some(labels),
    };
    let mut offline = Session::from_config(cfg).unwrap();
    assert_eq!(offline.run_baseline().unwrap().results, baseline.results);
    let replay = offline.run_panda(None).unwrap();
    assert_eq!(replay.logs, panda.logs);
    assert_eq!(replay.report.results, panda.report.results);
}

#[test]
fn missing_items_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let live = Session::from_config(config()).unwrap();
    let store_path = dir.path().join("embeddings.bin");
    let mut store = EmbeddingStore::open(&export(&live, dir.path()).0, None).unwrap();
    let dropped = live.tasks[0].train[0].item_id.clone();
    store.records.retain(|r| r.key.item_id != dropped);
    store.save(&store_path).unwrap();

    let mut cfg = config();
    cfg.provider = ProviderConfig::File {
        store: store_path,
        labels: Some(dir.path().join("labels.tsv")),
    };
    let err = Session::from_config(cfg).unwrap().run_baseline().unwrap_err().to_string();
    assert!(err.contains(&dropped), "{err}");
}
