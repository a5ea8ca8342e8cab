use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::standard_augment;
use super::compose::{compose_sample, AugmentedSample, ComposeMode};
use super::grid::PatchGrid;
use super::images::ImageSource;
use super::select::{score_patches, select_patches};
use crate::embedstore::{EmbeddingProvider, LabelRef, PatchScore};
use crate::error::{Error, Result};
use crate::seed;
use crate::smoother::Targets;
use crate::streamgen::{LabeledItem, TaskData};

pub const DEFAULT_THRESHOLD: f64 = 0.45;
pub const DEFAULT_Q: u32 = 1;
pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceConfig {
    /// Stop once the head/tail mean gap is at most `q`.
    pub q: u32,
    /// Patches transferred per image; `None` selects half the grid.
    pub select: Option<usize>,
    pub threshold: f64,
    pub max_iterations: usize,
    /// Keep consumed head images in the pool.
    pub reuse_head: bool,
    pub compose: ComposeMode,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            q: DEFAULT_Q,
            select: None,
            threshold: DEFAULT_THRESHOLD,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            reuse_head: false,
            compose: ComposeMode::Aligned,
        }
    }
}

impl BalanceConfig {
    pub fn k(&self, grid: &PatchGrid) -> usize {
        self.select.unwrap_or((grid.len() / 2).max(1))
    }

    pub fn validate(&self, grid: &PatchGrid) -> Result<()> {
        let k = self.k(grid);
        if k == 0 || k > grid.len() {
            return Err(Error::config(
                "patcher.select",
                format!("must lie in 1..={}, got {k}", grid.len()),
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("patcher.threshold", "must lie in [0, 1]"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("patcher.max_iterations", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Partition {
    AlreadyBalanced,
    Split { head: Vec<u32>, tail: Vec<u32> },
}

/// Classes above the mean count are head, the rest tail.
pub fn partition_head_tail(counts: &BTreeMap<u32, usize>) -> Result<Partition> {
    if counts.len() < 2 {
        return Err(Error::config("task", "head/tail partition needs at least two classes"));
    }
    let mean = counts.values().sum::<usize>() as f64 / counts.len() as f64;
    let (head, tail): (Vec<u32>, Vec<u32>) = counts.keys().partition(|c| counts[c] as f64 > mean);
    if head.is_empty() {
        return Ok(Partition::AlreadyBalanced);
    }
    Ok(Partition::Split { head, tail })
}

pub fn class_counts(items: &[LabeledItem]) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for item in items {
        *counts.entry(item.label_id).or_insert(0) += 1;
    }
    counts
}

/// `mean(head) − mean(tail)`; head counts are capped at `cap` when given.
pub fn head_tail_gap(counts: &BTreeMap<u32, usize>, head: &[u32], tail: &[u32], cap: Option<f64>) -> f64 {
    let head_mean = head
        .iter()
        .map(|c| {
            let v = counts[c] as f64;
            cap.map_or(v, |m| v.min(m))
        })
        .sum::<f64>()
        / head.len() as f64;
    let tail_mean = tail.iter().map(|c| counts[c] as f64).sum::<f64>() / tail.len() as f64;
    head_mean - tail_mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub iteration: usize,
    pub head_item: String,
    pub head_label: u32,
    pub tail_item: String,
    pub tail_label: u32,
    pub head_indices: Vec<usize>,
    pub tail_indices: Vec<usize>,
    pub head_scores: Vec<f64>,
    pub tail_scores: Vec<f64>,
    pub post_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BalanceStatus {
    AlreadyBalanced,
    Balanced,
    HeadPoolExhausted { residual_gap: f64 },
    MaxIterations { residual_gap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceFooter {
    pub task_index: usize,
    pub head_classes: Vec<u32>,
    pub tail_classes: Vec<u32>,
    pub initial_gap: f64,
    pub final_gap: f64,
    pub q: u32,
    pub syntheses: usize,
    pub skipped: usize,
    pub iterations: usize,
    pub targets: Option<Targets>,
    pub outcome: BalanceStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceLog {
    pub records: Vec<SynthesisRecord>,
    pub footer: BalanceFooter,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Synthesis(SynthesisRecord),
    Footer(BalanceFooter),
}

impl BalanceLog {
    /// One JSON object per line: every synthesis, then the footer.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let lines = self
            .records
            .iter()
            .cloned()
            .map(LogLine::Synthesis)
            .chain(std::iter::once(LogLine::Footer(self.footer.clone())));
        for line in lines {
            out.push_str(&serde_json::to_string(&line).expect("log lines serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut footer = None;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: LogLine = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("balance log line {}: {e}", n + 1)))?;
            match parsed {
                LogLine::Synthesis(r) if footer.is_none() => records.push(r),
                LogLine::Synthesis(_) => return Err(Error::Format("record after footer".into())),
                LogLine::Footer(f) => footer = Some(f),
            }
        }
        let footer = footer.ok_or_else(|| Error::Format("balance log has no footer".into()))?;
        Ok(Self { records, footer })
    }

    /// Gap after each accepted synthesis, starting with the initial gap.
    pub fn gap_sequence(&self) -> Vec<f64> {
        std::iter::once(self.footer.initial_gap)
            .chain(self.records.iter().map(|r| r.post_gap))
            .collect()
    }
}

pub struct BalanceOutcome {
    pub log: BalanceLog,
    pub final_counts: BTreeMap<u32, usize>,
}

/// Everything the balancing loop reads.
pub struct BalanceInputs<'a> {
    pub provider: &'a dyn EmbeddingProvider,
    pub images: &'a dyn ImageSource,
    pub labels: &'a [String],
    pub grid: PatchGrid,
    pub config: &'a BalanceConfig,
    pub targets: Option<Targets>,
    pub seed: u64,
}

struct Scorer<'a> {
    inputs: &'a BalanceInputs<'a>,
    cache: HashMap<String, Vec<PatchScore>>,
}

impl Scorer<'_> {
    fn scores(&mut self, item: &LabeledItem) -> Result<Vec<PatchScore>> {
        if let Some(s) = self.cache.get(&item.item_id) {
            return Ok(s.clone());
        }
        let inputs = self.inputs;
        let image = if inputs.provider.needs_images() {
            Some(inputs.images.load(item)?)
        } else {
            None
        };
        let name = inputs
            .labels
            .get(item.label_id as usize)
            .ok_or_else(|| Error::config("labels", format!("no name for class {}", item.label_id)))?;
        let label = LabelRef {
            id: item.label_id,
            name,
        };
        let s = score_patches(inputs.provider, &item.item_id, image.as_ref(), label, inputs.grid.side)?;
        self.cache.insert(item.item_id.clone(), s.clone());
        Ok(s)
    }
}

fn picked_scores(scores: &[PatchScore], indices: &[usize]) -> Vec<f64> {
    indices.iter().map(|&i| scores[i].score).collect()
}

/// Graft tail patches into head images until the head/tail mean gap is at
/// most `q`. Each accepted sample is passed to `sink` in iteration order.
/// Tasks with uniform counts or a single class are left untouched.
///
/// With targets, head counts enter the gap capped at `targets.max` and tail
/// classes below `targets.min` are served first; otherwise tail classes are
/// visited round-robin in ascending order of their initial count.
pub fn balance_task(
    task: &TaskData,
    inputs: &BalanceInputs<'_>,
    sink: &mut dyn FnMut(&AugmentedSample) -> Result<()>,
) -> Result<BalanceOutcome> {
    let cfg = inputs.config;
    cfg.validate(&inputs.grid)?;
    let mut counts = class_counts(&task.train);
    let cap = inputs.targets.map(|t| t.max);

    let partition = if counts.len() < 2 {
        Partition::AlreadyBalanced
    } else {
        partition_head_tail(&counts)?
    };
    let (head, tail) = match partition {
        Partition::AlreadyBalanced => {
            let footer = BalanceFooter {
                task_index: task.task_index,
                head_classes: Vec::new(),
                tail_classes: counts.keys().copied().collect(),
                initial_gap: 0.0,
                final_gap: 0.0,
                q: cfg.q,
                syntheses: 0,
                skipped: 0,
                iterations: 0,
                targets: inputs.targets,
                outcome: BalanceStatus::AlreadyBalanced,
            };
            return Ok(BalanceOutcome {
                log: BalanceLog {
                    records: Vec::new(),
                    footer,
                },
                final_counts: counts,
            });
        }
        Partition::Split { head, tail } => (head, tail),
    };

    let mut head_pool: BTreeMap<u32, Vec<LabeledItem>> = head.iter().map(|&c| (c, Vec::new())).collect();
    let mut tail_items: BTreeMap<u32, Vec<LabeledItem>> = tail.iter().map(|&c| (c, Vec::new())).collect();
    for item in &task.train {
        if let Some(pool) = head_pool.get_mut(&item.label_id) {
            pool.push(item.clone());
        } else if let Some(items) = tail_items.get_mut(&item.label_id) {
            items.push(item.clone());
        }
    }
    let mut tail_order = tail.clone();
    tail_order.sort_by_key(|c| (counts[c], *c));

    let k = cfg.k(&inputs.grid);
    let q = f64::from(cfg.q);
    let mut rng = seed::rng(inputs.seed);
    let mut scorer = Scorer {
        inputs,
        cache: HashMap::new(),
    };
    let initial_gap = head_tail_gap(&counts, &head, &tail, cap);
    let mut gap = initial_gap;
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut iterations = 0;
    let mut round_robin = 0;

    let outcome = loop {
        if gap <= q {
            break BalanceStatus::Balanced;
        }
        if iterations >= cfg.max_iterations {
            break BalanceStatus::MaxIterations { residual_gap: gap };
        }
        let head_class = head_pool
            .iter()
            .filter(|(_, pool)| !pool.is_empty())
            .max_by(|a, b| counts[a.0].cmp(&counts[b.0]).then(b.0.cmp(a.0)))
            .map(|(&c, _)| c);
        let Some(head_class) = head_class else {
            break BalanceStatus::HeadPoolExhausted { residual_gap: gap };
        };
        iterations += 1;

        let pool = &head_pool[&head_class];
        let head_pos = rng.gen_range(0..pool.len());
        let head_item = pool[head_pos].clone();

        let starving = inputs.targets.and_then(|t| {
            tail.iter()
                .copied()
                .filter(|c| (counts[c] as f64) < t.min)
                .min_by_key(|c| (counts[c], *c))
        });
        let tail_class = starving.unwrap_or_else(|| {
            let c = tail_order[round_robin % tail_order.len()];
            round_robin += 1;
            c
        });
        let candidates = &tail_items[&tail_class];
        let tail_item = candidates[rng.gen_range(0..candidates.len())].clone();

        let head_scores = scorer.scores(&head_item)?;
        let tail_scores = scorer.scores(&tail_item)?;
        let head_sel = select_patches(&head_scores, k, cfg.threshold);
        let tail_sel = select_patches(&tail_scores, k, cfg.threshold);
        if head_sel.is_empty() || tail_sel.is_empty() {
            skipped += 1;
            continue;
        }

        let head_img = inputs.images.load(&head_item)?;
        let tail_img = inputs.images.load(&tail_item)?;
        let composed = compose_sample(&head_img, &tail_img, &head_sel, &tail_sel, cfg.compose, &inputs.grid)?;
        let augment_seed = seed::hash_seed(inputs.seed, &[b"augment", &(iterations as u64).to_le_bytes()]);
        let sample = standard_augment(&composed, augment_seed, &inputs.grid);
        sink(&sample)?;

        *counts.get_mut(&tail_class).expect("tail class counted") += 1;
        if !cfg.reuse_head {
            head_pool.get_mut(&head_class).expect("head pool").swap_remove(head_pos);
            *counts.get_mut(&head_class).expect("head class counted") -= 1;
        }
        gap = head_tail_gap(&counts, &head, &tail, cap);
        records.push(SynthesisRecord {
            iteration: iterations,
            head_item: head_item.item_id,
            head_label: head_class,
            tail_item: tail_item.item_id,
            tail_label: tail_class,
            head_scores: picked_scores(&head_scores, &head_sel),
            tail_scores: picked_scores(&tail_scores, &tail_sel),
            head_indices: head_sel,
            tail_indices: tail_sel,
            post_gap: gap,
        });
    };

    let footer = BalanceFooter {
        task_index: task.task_index,
        head_classes: head,
        tail_classes: tail,
        initial_gap,
        final_gap: gap,
        q: cfg.q,
        syntheses: records.len(),
        skipped,
        iterations,
        targets: inputs.targets,
        outcome,
    };
    Ok(BalanceOutcome {
        log: BalanceLog { records, footer },
        final_counts: counts,
    })
}
