//! Nearest-class-mean continual learner and its metrics.
//!
//! Each task adds one prototype (the mean train embedding) per new class.
//! Prototypes are never revisited, which keeps the learner exemplar-free.
//! After every task all test splits seen so far are scored, filling one row
//! of the lower-triangular accuracy matrix.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMetric {
    #[default]
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeature {
    pub feature: Vec<f32>,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub vector: Vec<f64>,
    pub count: usize,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub metric: PrototypeMetric,
    dimension: Option<usize>,
    classes: BTreeMap<u32, Prototype>,
}

impl PrototypeBank {
    pub fn new(metric: PrototypeMetric) -> Self {
        Self {
            metric,
            dimension: None,
            classes: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn prototype(&self, class: u32) -> Option<&Prototype> {
        self.classes.get(&class)
    }

    /// Add exact per-class means for the classes of one task.
    pub fn fit_task(&mut self, samples: &[LabeledFeature]) -> Result<()> {
        let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
        for s in samples {
            let d = *self.dimension.get_or_insert(s.feature.len());
            if s.feature.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: s.feature.len(),
                });
            }
            if self.classes.contains_key(&s.label) {
                return Err(Error::ClassAlreadyFitted(s.label));
            }
            let (sum, n) = sums.entry(s.label).or_insert_with(|| (vec![0.0; d], 0));
            for (acc, &v) in sum.iter_mut().zip(&s.feature) {
                *acc += f64::from(v);
            }
            *n += 1;
        }
        for (label, (sum, n)) in sums {
            let vector: Vec<f64> = sum.into_iter().map(|v| v / n as f64).collect();
            let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            self.classes.insert(label, Prototype { vector, count: n, norm });
        }
        Ok(())
    }

    /// Most similar prototype; ties go to the smaller class id.
    pub fn predict(&self, embedding: &[f32]) -> Result<u32> {
        if self.classes.is_empty() {
            return Err(Error::Empty("prototype bank"));
        }
        let d = self.dimension.unwrap_or(embedding.len());
        if embedding.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: embedding.len(),
            });
        }
        let query: Vec<f64> = embedding.iter().map(|&v| f64::from(v)).collect();
        let qnorm = query.iter().map(|v| v * v).sum::<f64>().sqrt();
        if self.metric == PrototypeMetric::Cosine && qnorm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let mut best: Option<(u32, f64)> = None;
        for (&class, proto) in &self.classes {
            let score = match self.metric {
                PrototypeMetric::Cosine => {
                    if proto.norm == 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        let dot: f64 = query.iter().zip(&proto.vector).map(|(a, b)| a * b).sum();
                        dot / (qnorm * proto.norm)
                    }
                }
                PrototypeMetric::Euclidean => -query
                    .iter()
                    .zip(&proto.vector)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            };
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((class, score));
            }
        }
        Ok(best.expect("non-empty bank").0)
    }

    /// Predictions for many items, in item order.
    pub fn predict_all(&self, items: &[LabeledFeature]) -> Result<Vec<u32>> {
        items.par_iter().map(|it| self.predict(&it.feature)).collect()
    }

    pub fn accuracy(&self, items: &[LabeledFeature]) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::Empty("test split"));
        }
        let preds = self.predict_all(items)?;
        let correct = preds.iter().zip(items).filter(|(p, it)| **p == it.label).count();
        Ok(correct as f64 / items.len() as f64)
    }
}

/// `a[m][n]` for `n ≤ m`, both 1-based.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::Metric(format!(
                    "row {} has {} entries, expected {}",
                    i + 1,
                    row.len(),
                    i + 1
                )));
            }
            if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::Metric(format!("row {} has entries outside [0, 1]", i + 1)));
            }
        }
        Ok(Self { rows })
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, m: usize, n: usize) -> Option<f64> {
        if n == 0 || n > m {
            return None;
        }
        self.rows.get(m.checked_sub(1)?)?.get(n - 1).copied()
    }

    /// Flat `(m, n, accuracy)` triples.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(m, row)| row.iter().enumerate().map(move |(n, &a)| (m + 1, n + 1, a)))
    }
}

/// `A_k = (1/k) Σ_{i ≤ k} a[k][i]`.
pub fn average_accuracy(matrix: &AccuracyMatrix, k: usize) -> Result<f64> {
    if k == 0 || k > matrix.num_tasks() {
        return Err(Error::Metric(format!(
            "k = {k} outside 1..={}",
            matrix.num_tasks()
        )));
    }
    let row = &matrix.rows[k - 1];
    Ok(row.iter().sum::<f64>() / k as f64)
}

/// Mean over earlier tasks of the drop from their best accuracy so far to
/// their accuracy after task `k`.
pub fn average_forgetting(matrix: &AccuracyMatrix, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::Metric("forgetting needs at least two tasks".into()));
    }
    if k > matrix.num_tasks() {
        return Err(Error::Metric(format!(
            "k = {k} outside 2..={}",
            matrix.num_tasks()
        )));
    }
    let total: f64 = (1..k)
        .map(|m| {
            let current = matrix.rows[k - 1][m - 1];
            let best = (m..=k)
                .map(|i| matrix.rows[i - 1][m - 1])
                .fold(f64::NEG_INFINITY, f64::max);
            best - current
        })
        .sum();
    Ok(total / (k - 1) as f64)
}

/// Sequential learner: fit a task, then score every test split seen so far.
#[derive(Debug, Clone, Default)]
pub struct ContinualLearner {
    pub bank: PrototypeBank,
    pub matrix: AccuracyMatrix,
    tests: Vec<Vec<LabeledFeature>>,
}

impl ContinualLearner {
    pub fn new(metric: PrototypeMetric) -> Self {
        Self {
            bank: PrototypeBank::new(metric),
            matrix: AccuracyMatrix::default(),
            tests: Vec::new(),
        }
    }

    /// Returns the new matrix row.
    pub fn step(&mut self, train: &[LabeledFeature], test: Vec<LabeledFeature>) -> Result<&[f64]> {
        if test.is_empty() {
            return Err(Error::Empty("test split"));
        }
        self.bank.fit_task(train)?;
        self.tests.push(test);
        let row = self
            .tests
            .iter()
            .map(|t| self.bank.accuracy(t))
            .collect::<Result<Vec<_>>>()?;
        self.matrix.rows.push(row);
        Ok(self.matrix.rows.last().expect("row pushed"))
    }

    pub fn tests(&self) -> &[Vec<LabeledFeature>] {
        &self.tests
    }
}

pub struct TaskFeatures {
    pub train: Vec<LabeledFeature>,
    pub test: Vec<LabeledFeature>,
}

pub fn evaluate_matrix(tasks: Vec<TaskFeatures>, metric: PrototypeMetric) -> Result<ContinualLearner> {
    let mut learner = ContinualLearner::new(metric);
    for task in tasks {
        learner.step(&task.train, task.test)?;
    }
    Ok(learner)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassGroup {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl GroupAccuracy {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Breakdown {
    pub head: GroupAccuracy,
    pub tail: GroupAccuracy,
    pub overall: GroupAccuracy,
}

/// Accuracy of `bank` split by the head/tail group of each test item's class.
/// Classes missing from `groups` count only towards the overall figure.
pub fn tail_head_breakdown(
    bank: &PrototypeBank,
    items: &[LabeledFeature],
    groups: &BTreeMap<u32, ClassGroup>,
) -> Result<Breakdown> {
    let preds = bank.predict_all(items)?;
    let mut out = Breakdown::default();
    for (pred, item) in preds.iter().zip(items) {
        let hit = usize::from(*pred == item.label);
        out.overall.correct += hit;
        out.overall.total += 1;
        let slot = match groups.get(&item.label) {
            Some(ClassGroup::Head) => &mut out.head,
            Some(ClassGroup::Tail) => &mut out.tail,
            None => continue,
        };
        slot.correct += hit;
        slot.total += 1;
    }
    Ok(out)
}
