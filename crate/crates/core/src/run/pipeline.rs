use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ImageKind, RunConfig};
use super::report::{ClassResult, EvalReport, EvalResults, Variant, REPORT_FORMAT_VERSION};
use crate::embedstore::{EmbeddingProvider, EmbeddingVector, LabelRef, ProviderConfig, ProviderError, SyntheticProvider};
use crate::error::{Error, Result};
use crate::evaluator::{
    average_accuracy, average_forgetting, tail_head_breakdown, ClassGroup, ContinualLearner, LabeledFeature,
};
use crate::manifest::{synthetic_records, Manifest};
use crate::patcher::{
    balance_task, class_counts, partition_head_tail, AugmentedSample, BalanceInputs, BalanceLog, FileImages,
    ImageSource, Partition, PatchGrid, PatchOrigin, SyntheticImages,
};
use crate::seed::{self, tags};
use crate::smoother::Smoother;
use crate::streamgen::{build_plan, materialize, summarize_distribution, LabeledItem, StreamPlan, TaskData};

/// The configured manifest, or a generated one with enough items per class
/// for the largest train count plus the test split.
pub fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    match &cfg.stream.manifest {
        Some(path) => Manifest::load(path),
        None => {
            let per_class = cfg.stream.n_max as usize + cfg.eval.test_per_class;
            Manifest::parse(&Manifest::to_text(&synthetic_records(cfg.stream.num_classes, per_class)))
        }
    }
}

pub fn build_stream(cfg: &RunConfig) -> Result<(Manifest, StreamPlan)> {
    let manifest = load_manifest(cfg)?;
    let plan = build_plan(&cfg.long_tail(), &manifest, cfg.stream.num_tasks, &cfg.stream.dli)?;
    Ok((manifest, plan))
}

fn synthetic_layout(cfg: &RunConfig, provider_seed: u64) -> SyntheticProvider {
    match &cfg.provider {
        ProviderConfig::Synthetic {
            dimension,
            sigma,
            foreground_fraction,
            background_scale,
        } => SyntheticProvider::new(provider_seed, *dimension, *sigma, *foreground_fraction, *background_scale),
        _ => SyntheticProvider::new(provider_seed, 1, 0.0, 0.5, 1.0),
    }
}

/// A materialized stream with its provider, image source and a cache of
/// patch embeddings.
pub struct Session {
    pub config: RunConfig,
    pub plan: StreamPlan,
    pub tasks: Vec<TaskData>,
    pub grid: PatchGrid,
    provider: Box<dyn EmbeddingProvider>,
    images: Box<dyn ImageSource>,
    patches: HashMap<String, Vec<EmbeddingVector>>,
}

impl Session {
    pub fn open(config: RunConfig, plan: StreamPlan, manifest: &Manifest) -> Result<Self> {
        if plan.manifest_digest != manifest.digest {
            return Err(Error::DigestMismatch(plan.manifest_digest.clone(), manifest.digest.clone()));
        }
        let grid = config.grid()?;
        let tasks = materialize(&plan, manifest, config.eval.test_per_class)?;
        let provider_seed = seed::derive(config.seed, tags::PROVIDER);
        let provider = config.provider.build(provider_seed)?;
        let images: Box<dyn ImageSource> = match config.images.source {
            ImageKind::Synthetic => Box::new(SyntheticImages::new(
                synthetic_layout(&config, provider_seed),
                grid,
                seed::derive(config.seed, tags::IMAGES),
            )),
            ImageKind::Files => {
                let root = config
                    .images
                    .root
                    .clone()
                    .or_else(|| {
                        config
                            .stream
                            .manifest
                            .as_deref()
                            .and_then(Path::parent)
                            .map(Path::to_path_buf)
                    })
                    .unwrap_or_else(|| PathBuf::from("."));
                Box::new(FileImages::new(root, config.images.resolution))
            }
        };
        Ok(Self {
            config,
            plan,
            tasks,
            grid,
            provider,
            images,
            patches: HashMap::new(),
        })
    }

    /// Build the plan from the config and open it.
    pub fn from_config(config: RunConfig) -> Result<Self> {
        let (manifest, plan) = build_stream(&config)?;
        Self::open(config, plan, &manifest)
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider.as_ref()
    }

    fn label(&self, id: u32) -> Result<LabelRef<'_>> {
        let name = self
            .plan
            .labels
            .get(id as usize)
            .ok_or_else(|| Error::config("labels", format!("no label for class {id}")))?;
        Ok(LabelRef { id, name })
    }

    /// Fetch patch embeddings for every uncached item. Missing embeddings
    /// are reported together.
    fn ensure_patches(&mut self, items: &[LabeledItem]) -> Result<()> {
        let mut todo: Vec<&LabeledItem> = items.iter().filter(|i| !self.patches.contains_key(&i.item_id)).collect();
        todo.sort();
        todo.dedup();
        let this = &*self;
        let fetched: Vec<(String, std::result::Result<Vec<EmbeddingVector>, Error>)> = todo
            .par_iter()
            .map(|item| {
                let result = (|| {
                    let image = if this.provider.needs_images() {
                        Some(this.images.load(item)?)
                    } else {
                        None
                    };
                    let label = this.label(item.label_id)?;
                    let v = this
                        .provider
                        .patch_embeddings(&item.item_id, label, image.as_ref(), this.grid.side)?;
                    if v.len() != this.grid.len() {
                        return Err(Error::Provider(ProviderError::Malformed(format!(
                            "{} patch vectors for {}, expected {}",
                            v.len(),
                            item.item_id,
                            this.grid.len()
                        ))));
                    }
                    Ok(v)
                })();
                (item.item_id.clone(), result)
            })
            .collect();

        let mut missing = Vec::new();
        for (id, result) in fetched {
            match result {
                Ok(v) => {
                    self.patches.insert(id, v);
                }
                Err(Error::Provider(ProviderError::Missing(_))) => missing.push(id),
                Err(e) => return Err(e),
            }
        }
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(20).map(String::as_str).collect();
            return Err(Error::Format(format!(
                "{} items have no embeddings: {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > shown.len() { ", ..." } else { "" }
            )));
        }
        Ok(())
    }

    fn item_feature(&self, item: &LabeledItem) -> LabeledFeature {
        let patches = &self.patches[&item.item_id];
        let dim = patches[0].dimension();
        let mut acc = vec![0.0f64; dim];
        for p in patches {
            for (a, &x) in acc.iter_mut().zip(p.as_slice()) {
                *a += f64::from(x);
            }
        }
        let n = patches.len() as f64;
        LabeledFeature {
            feature: acc.into_iter().map(|a| (a / n) as f32).collect(),
            label: item.label_id,
        }
    }

    fn item_features(&mut self, items: &[LabeledItem]) -> Result<Vec<LabeledFeature>> {
        self.ensure_patches(items)?;
        Ok(items.iter().map(|i| self.item_feature(i)).collect())
    }

    /// Mean over patch positions of the embeddings that fill each position;
    /// blank positions contribute zero.
    fn augmented_feature(&self, sample: &Provenance) -> LabeledFeature {
        let head = &self.patches[&sample.head];
        let tail = &self.patches[&sample.tail];
        let dim = head[0].dimension();
        let mut acc = vec![0.0f64; dim];
        for origins in &sample.sources {
            for origin in origins {
                let v = match *origin {
                    PatchOrigin::Head(i) => &head[i],
                    PatchOrigin::Tail(i) => &tail[i],
                };
                for (a, &x) in acc.iter_mut().zip(v.as_slice()) {
                    *a += f64::from(x);
                }
            }
        }
        let n = sample.sources.len() as f64;
        LabeledFeature {
            feature: acc.into_iter().map(|a| (a / n) as f32).collect(),
            label: sample.label,
        }
    }

    /// Head or tail group of every class, from the planned per-task counts.
    pub fn class_groups(&self) -> BTreeMap<u32, ClassGroup> {
        let mut groups = BTreeMap::new();
        for task in &self.tasks {
            let counts = class_counts(&task.train);
            let head = match (counts.len() >= 2).then(|| partition_head_tail(&counts)) {
                Some(Ok(Partition::Split { head, .. })) => head,
                _ => Vec::new(),
            };
            for &c in counts.keys() {
                let g = if head.contains(&c) {
                    ClassGroup::Head
                } else {
                    ClassGroup::Tail
                };
                groups.insert(c, g);
            }
        }
        groups
    }

    /// Evaluate without augmentation.
    pub fn run_baseline(&mut self) -> Result<EvalReport> {
        let mut learner = ContinualLearner::new(self.config.eval.metric);
        for k in 0..self.tasks.len() {
            let train = self.tasks[k].train.clone();
            let test = self.tasks[k].test.clone();
            let train = self.item_features(&train)?;
            let test = self.item_features(&test)?;
            learner.step(&train, test)?;
        }
        self.report(Variant::Baseline, &learner, None, None)
    }

    /// Balance every task, train on original plus synthesized samples and
    /// evaluate. Synthesized images are written under `persist` when given.
    pub fn run_panda(&mut self, persist: Option<&Path>) -> Result<PandaRun> {
        let mut learner = ContinualLearner::new(self.config.eval.metric);
        let mut smoother = if self.config.smoother.enabled {
            Some(Smoother::new(self.config.smoother.strategy, self.config.smoother.base_beta)?)
        } else {
            None
        };
        let balance_cfg = self.config.patcher.balance();
        let balance_seed = seed::derive(self.config.seed, tags::BALANCE);
        let mut logs = Vec::with_capacity(self.tasks.len());

        for k in 0..self.tasks.len() {
            let task = self.tasks[k].clone();
            let plan_task = &self.plan.tasks[k];
            let incoming = summarize_distribution(plan_task)?;
            let targets = match smoother.as_mut() {
                Some(s) => Some(s.begin_task(task.task_index, &incoming)?),
                None => None,
            };
            let mut train = self.item_features(&task.train)?;
            let test = self.item_features(&task.test)?;

            let mut samples = Vec::new();
            let outcome = {
                let inputs = BalanceInputs {
                    provider: self.provider.as_ref(),
                    images: self.images.as_ref(),
                    labels: &self.plan.labels,
                    grid: self.grid,
                    config: &balance_cfg,
                    targets,
                    seed: seed::hash_seed(balance_seed, &[&(task.task_index as u64).to_le_bytes()]),
                };
                let mut written = 0usize;
                balance_task(&task, &inputs, &mut |sample| {
                    if let Some(dir) = persist {
                        written += 1;
                        persist_sample(dir, task.task_index, written, sample)?;
                    }
                    samples.push(Provenance {
                        head: sample.head_source.clone(),
                        tail: sample.tail_source.clone(),
                        label: sample.label_id,
                        sources: sample.patch_sources.clone(),
                    });
                    Ok(())
                })
                .map_err(|e| Error::Format(format!("task {}: {e}", task.task_index)))?
            };
            for p in &samples {
                train.push(self.augmented_feature(p));
            }
            let row = learner.step(&train, test)?;
            let current = row[k];
            if let Some(s) = smoother.as_mut() {
                let trained: Vec<u32> = outcome.final_counts.values().map(|&c| c as u32).collect();
                s.complete_task(&incoming, &trained, current);
            }
            logs.push(outcome.log);
        }
        let footers = logs.iter().map(|l| l.footer.clone()).collect();
        let report = self.report(
            Variant::Panda,
            &learner,
            smoother.map(|s| s.trace),
            Some(footers),
        )?;
        Ok(PandaRun { report, logs })
    }

    fn report(
        &self,
        variant: Variant,
        learner: &ContinualLearner,
        smoothing: Option<Vec<crate::smoother::SmoothingStep>>,
        augmentation: Option<Vec<crate::patcher::BalanceFooter>>,
    ) -> Result<EvalReport> {
        let matrix = &learner.matrix;
        let t = matrix.num_tasks();
        let average = (1..=t).map(|k| average_accuracy(matrix, k)).collect::<Result<Vec<_>>>()?;
        let forgetting = if t >= 2 {
            Some(average_forgetting(matrix, t)?)
        } else {
            None
        };
        let all_tests: Vec<LabeledFeature> = learner.tests().iter().flatten().cloned().collect();
        let groups = self.class_groups();
        let breakdown = tail_head_breakdown(&learner.bank, &all_tests, &groups)?;
        let preds = learner.bank.predict_all(&all_tests)?;
        let mut per_class: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for (p, item) in preds.iter().zip(&all_tests) {
            let e = per_class.entry(item.label).or_default();
            e.0 += usize::from(*p == item.label);
            e.1 += 1;
        }
        let train_counts: BTreeMap<u32, usize> = self
            .tasks
            .iter()
            .flat_map(|t| class_counts(&t.train))
            .collect();
        let classes = per_class
            .into_iter()
            .map(|(class_id, (correct, total))| ClassResult {
                class_id,
                label: self.plan.labels[class_id as usize].clone(),
                group: groups.get(&class_id).copied().unwrap_or(ClassGroup::Tail),
                train_count: train_counts.get(&class_id).copied().unwrap_or(0),
                correct,
                total,
            })
            .collect();
        Ok(EvalReport {
            format_version: REPORT_FORMAT_VERSION,
            variant,
            plan_digest: self.plan.digest(),
            seed: self.config.seed,
            config: self.config.clone(),
            results: EvalResults {
                accuracy_matrix: matrix.rows.clone(),
                average_accuracy: average,
                final_average_forgetting: forgetting,
                breakdown,
                classes,
            },
            smoothing,
            augmentation,
        })
    }
}

/// Feature-relevant part of a synthesized sample.
struct Provenance {
    head: String,
    tail: String,
    label: u32,
    sources: Vec<Vec<PatchOrigin>>,
}

pub struct PandaRun {
    pub report: EvalReport,
    pub logs: Vec<BalanceLog>,
}

fn file_stem(item_id: &str) -> String {
    let stem = Path::new(item_id)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn persist_sample(dir: &Path, task_index: usize, n: usize, sample: &AugmentedSample) -> Result<()> {
    let class_dir = dir.join(format!("task_{task_index:02}")).join(sample.label_id.to_string());
    std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
    let name = format!(
        "{n:05}_{}_from_{}.png",
        file_stem(&sample.tail_source),
        file_stem(&sample.head_source)
    );
    sample.image.save_png(&class_dir.join(name))
}
