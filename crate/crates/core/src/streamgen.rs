//! Long-tailed class-incremental stream plans.
//!
//! A plan is built in four steps: exponential per-class counts, a seeded
//! shuffle that assigns counts to classes and orders the stream, a uniform
//! split into disjoint tasks, and optional per-task imbalance overrides
//! (the dual-level setting). [`materialize`] then draws concrete manifest
//! items for every task.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::seed;

pub const PLAN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailConfig {
    pub num_classes: usize,
    /// Samples in the most frequent class.
    pub n_max: u32,
    /// Ratio of least to most frequent class, in (0, 1].
    pub rho: f64,
    #[serde(default = "default_min_count")]
    pub min_count: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_min_count() -> u32 {
    3
}

fn default_seed() -> u64 {
    seed::DEFAULT_SEED
}

impl LongTailConfig {
    pub fn new(num_classes: usize, n_max: u32, rho: f64) -> Self {
        Self {
            num_classes,
            n_max,
            rho,
            min_count: default_min_count(),
            seed: default_seed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be positive"));
        }
        if self.n_max == 0 {
            return Err(Error::config("n_max", "must be positive"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::config("rho", format!("{} is outside (0, 1]", self.rho)));
        }
        if self.min_count == 0 || self.min_count > self.n_max {
            return Err(Error::config(
                "min_count",
                format!("{} must lie in 1..={}", self.min_count, self.n_max),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    /// 1-based.
    pub task_index: usize,
    pub class_ids: Vec<usize>,
    pub per_class_counts: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_star: Option<f64>,
}

impl TaskPlan {
    pub fn counts_by_class(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.class_ids
            .iter()
            .copied()
            .zip(self.per_class_counts.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPlan {
    pub format_version: u32,
    pub config: LongTailConfig,
    pub tasks: Vec<TaskPlan>,
    pub manifest_digest: String,
    /// Class id to label string.
    pub labels: Vec<String>,
}

impl StreamPlan {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: StreamPlan =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("stream plan: {e}")))?;
        if plan.format_version != PLAN_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "stream plan format_version {} (expected {PLAN_FORMAT_VERSION})",
                plan.format_version
            )));
        }
        Ok(plan)
    }

    /// Digest of the serialized plan, used to pair reports.
    pub fn digest(&self) -> String {
        crate::manifest::digest_bytes(self.to_json().as_bytes())
    }

    /// Task that owns `class_id`, if any.
    pub fn task_of_class(&self, class_id: usize) -> Option<usize> {
        self.tasks
            .iter()
            .find(|t| t.class_ids.contains(&class_id))
            .map(|t| t.task_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub counts: Vec<u32>,
    pub min: u32,
    pub max: u32,
    pub mean: f64,
    /// min / max
    pub ratio: f64,
}

impl DistributionSummary {
    pub fn from_counts(counts: &[u32]) -> Result<Self> {
        let (&first, rest) = counts
            .split_first()
            .ok_or(Error::Empty("distribution has no classes"))?;
        let (min, max) = rest
            .iter()
            .fold((first, first), |(lo, hi), &c| (lo.min(c), hi.max(c)));
        if max == 0 {
            return Err(Error::Empty("distribution has only empty classes"));
        }
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        Ok(Self {
            counts: counts.to_vec(),
            min,
            max,
            mean: total as f64 / counts.len() as f64,
            ratio: f64::from(min) / f64::from(max),
        })
    }
}

/// A class with its assigned per-class count, in stream order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class_id: usize,
    pub count: u32,
}

fn round_half_up(x: f64) -> u32 {
    (x + 0.5).floor() as u32
}

/// Exponential decay from `anchor` down to `anchor * ratio` over `n`
/// ranked classes, floored at `min_count`.
fn decay_counts(n: usize, anchor: u32, ratio: f64, min_count: u32) -> Result<Vec<u32>> {
    if n < 2 {
        if ratio < 1.0 {
            return Err(Error::config(
                "num_classes",
                "a decay with rho < 1 needs at least two classes",
            ));
        }
        return Ok(vec![anchor.max(min_count); n]);
    }
    let last = (n - 1) as f64;
    Ok((0..n)
        .map(|j| {
            let raw = f64::from(anchor) * ratio.powf(j as f64 / last);
            round_half_up(raw).max(min_count)
        })
        .collect())
}

/// Ranked per-class counts: `max(min_count, round(n_max * rho^(j/(C-1))))`.
pub fn build_long_tail_counts(cfg: &LongTailConfig) -> Result<Vec<u32>> {
    cfg.validate()?;
    decay_counts(cfg.num_classes, cfg.n_max, cfg.rho, cfg.min_count)
}

/// Assign ranked counts to classes with one seeded permutation and order the
/// stream with a second one. The multiset of counts is preserved.
pub fn shuffle_class_order(counts: &[u32], seed: u64) -> Vec<ClassCount> {
    let mut rng = seed::rng(seed);
    let mut owners: Vec<usize> = (0..counts.len()).collect();
    owners.shuffle(&mut rng);
    let mut by_class = vec![0u32; counts.len()];
    for (rank, &class_id) in owners.iter().enumerate() {
        by_class[class_id] = counts[rank];
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .map(|class_id| ClassCount {
            class_id,
            count: by_class[class_id],
        })
        .collect()
}

pub fn split_tasks(shuffled: &[ClassCount], num_tasks: usize) -> Result<Vec<TaskPlan>> {
    if num_tasks == 0 {
        return Err(Error::config("num_tasks", "must be positive"));
    }
    if !shuffled.len().is_multiple_of(num_tasks) {
        return Err(Error::config(
            "num_tasks",
            format!(
                "{} classes cannot be split evenly into {num_tasks} tasks",
                shuffled.len()
            ),
        ));
    }
    let per_task = shuffled.len() / num_tasks;
    Ok(shuffled
        .chunks(per_task)
        .enumerate()
        .map(|(i, chunk)| TaskPlan {
            task_index: i + 1,
            class_ids: chunk.iter().map(|c| c.class_id).collect(),
            per_class_counts: chunk.iter().map(|c| c.count).collect(),
            rho_star: None,
        })
        .collect())
}

/// Re-derive the counts of task `star` (1-based) with the within-task ratio
/// `rho_star`, anchored at that task's current maximum. Classes keep their
/// rank order inside the task. Every other task is left untouched.
pub fn apply_task_imbalance(plan: &StreamPlan, star: usize, rho_star: f64) -> Result<StreamPlan> {
    if star == 0 || star > plan.tasks.len() {
        return Err(Error::TaskOutOfRange {
            index: star,
            num_tasks: plan.tasks.len(),
        });
    }
    if !(rho_star > 0.0 && rho_star <= 1.0) {
        return Err(Error::config(
            "rho_star",
            format!("{rho_star} is outside (0, 1]"),
        ));
    }
    let mut out = plan.clone();
    let task = &mut out.tasks[star - 1];
    let anchor = *task
        .per_class_counts
        .iter()
        .max()
        .ok_or(Error::Empty("task has no classes"))?;
    let decayed = decay_counts(
        task.per_class_counts.len(),
        anchor,
        rho_star,
        plan.config.min_count,
    )?;
    // Stable rank: larger original count first, then stream position.
    let mut ranked: Vec<usize> = (0..task.per_class_counts.len()).collect();
    ranked.sort_by(|&a, &b| task.per_class_counts[b].cmp(&task.per_class_counts[a]).then(a.cmp(&b)));
    let mut counts = vec![0; ranked.len()];
    for (rank, pos) in ranked.into_iter().enumerate() {
        counts[pos] = decayed[rank];
    }
    task.per_class_counts = counts;
    task.rho_star = Some(rho_star);
    Ok(out)
}

pub fn summarize_distribution(task: &TaskPlan) -> Result<DistributionSummary> {
    DistributionSummary::from_counts(&task.per_class_counts)
}

/// One dual-level override.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskOverride {
    pub task: usize,
    pub rho_star: f64,
}

/// Build a complete plan for the labels of `manifest`.
pub fn build_plan(
    cfg: &LongTailConfig,
    manifest: &Manifest,
    num_tasks: usize,
    overrides: &[TaskOverride],
) -> Result<StreamPlan> {
    let labels = manifest.labels();
    if labels.len() != cfg.num_classes {
        return Err(Error::config(
            "num_classes",
            format!(
                "config says {} but the manifest has {} labels",
                cfg.num_classes,
                labels.len()
            ),
        ));
    }
    let counts = build_long_tail_counts(cfg)?;
    let shuffled = shuffle_class_order(&counts, cfg.seed);
    let mut plan = StreamPlan {
        format_version: PLAN_FORMAT_VERSION,
        config: cfg.clone(),
        tasks: split_tasks(&shuffled, num_tasks)?,
        manifest_digest: manifest.digest.clone(),
        labels,
    };
    for o in overrides {
        plan = apply_task_imbalance(&plan, o.task, o.rho_star)?;
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledItem {
    pub item_id: String,
    pub label_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub task_index: usize,
    pub class_ids: Vec<usize>,
    pub train: Vec<LabeledItem>,
    pub test: Vec<LabeledItem>,
}

/// Draw train and balanced test items for every task.
///
/// Each class's manifest items are shuffled with a class-specific seed; the
/// first `count` become train items and up to `test_per_class` of the
/// remainder become test items.
pub fn materialize(
    plan: &StreamPlan,
    manifest: &Manifest,
    test_per_class: usize,
) -> Result<Vec<TaskData>> {
    let index: BTreeMap<&str, usize> = plan
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut per_class: Vec<Vec<&str>> = vec![Vec::new(); plan.labels.len()];
    for rec in &manifest.records {
        let class_id = *index.get(rec.label.as_str()).ok_or_else(|| {
            Error::config("manifest", format!("label `{}` is not in the plan", rec.label))
        })?;
        per_class[class_id].push(rec.path.as_str());
    }
    let base = seed::derive(plan.config.seed, seed::tags::MATERIALIZE);

    let mut out = Vec::with_capacity(plan.tasks.len());
    for task in &plan.tasks {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (class_id, count) in task.counts_by_class() {
            let items = &per_class[class_id];
            let needed = count as usize;
            if items.len() < needed {
                return Err(Error::Shortage {
                    class_id,
                    label: plan.labels[class_id].clone(),
                    needed,
                    available: items.len(),
                });
            }
            let mut shuffled = items.clone();
            let class_seed = seed::hash_seed(base, &[&(class_id as u64).to_le_bytes()]);
            shuffled.shuffle(&mut seed::rng(class_seed));
            let label_id = class_id as u32;
            let make = |id: &&str| LabeledItem {
                item_id: (*id).to_string(),
                label_id,
            };
            train.extend(shuffled[..needed].iter().map(make));
            let test_end = (needed + test_per_class).min(shuffled.len());
            test.extend(shuffled[needed..test_end].iter().map(make));
        }
        out.push(TaskData {
            task_index: task.task_index,
            class_ids: task.class_ids.clone(),
            train,
            test,
        });
    }
    Ok(out)
}

/// Text table of per-task class counts.
pub fn count_table(plan: &StreamPlan) -> String {
    let mut out = String::from("task  classes  min    max    mean     ratio    rho*\n");
    for task in &plan.tasks {
        let s = summarize_distribution(task).expect("planned tasks are non-empty");
        let star = task
            .rho_star
            .map(|r| format!("{r}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<5} {:<8} {:<6} {:<6} {:<8.2} {:<8.4} {}\n",
            task.task_index,
            task.class_ids.len(),
            s.min,
            s.max,
            s.mean,
            s.ratio,
            star
        ));
        let counts: Vec<String> = task
            .counts_by_class()
            .map(|(c, n)| format!("{c}:{n}"))
            .collect();
        out.push_str(&format!("      {}\n", counts.join(" ")));
    }
    out
}
