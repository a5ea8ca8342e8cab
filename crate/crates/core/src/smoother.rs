//! Adaptive smoothing of per-task count extrema.
//!
//! The smoother keeps the minimum and maximum per-class train count of every
//! completed task and blends the most recent ones with the current task's
//! extrema: `adjusted = β·prior + (1 − β)·current`. The blended band becomes
//! the balancing target for the current task. β follows one of three rule
//! based schedules driven by accuracy history, task progress, or the size of
//! the latest distribution shift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streamgen::DistributionSummary;

pub const DEFAULT_BASE_BETA: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaStrategy {
    #[default]
    Performance,
    TaskProgress,
    DistributionChange,
}

impl std::str::FromStr for BetaStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "performance" => Ok(Self::Performance),
            "task_progress" => Ok(Self::TaskProgress),
            "distribution_change" => Ok(Self::DistributionChange),
            other => Err(Error::config("strategy", format!("unknown strategy `{other}`"))),
        }
    }
}

pub fn adjust_extrema(prior: f64, current: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::config("beta", format!("{beta} is outside [0, 1]")));
    }
    Ok(beta * prior + (1.0 - beta) * current)
}

/// Lower β after an accuracy drop of more than 0.05, raise it after a gain
/// of more than 0.02.
pub fn beta_performance(history: &[f64], base_beta: f64) -> f64 {
    let [.., prev, last] = history else {
        return base_beta;
    };
    if *last < prev - 0.05 {
        (base_beta - 0.15).max(0.5)
    } else if *last > prev + 0.02 {
        (base_beta + 0.1).min(0.9)
    } else {
        base_beta
    }
}

/// Ramp β up by at most 0.3 over the first ten tasks.
pub fn beta_task_progress(task_num: Option<i64>, base_beta: f64) -> f64 {
    match task_num {
        Some(t) if t >= 0 => {
            let progress = (t as f64 / 10.0).min(1.0);
            (base_beta + 0.3 * progress).min(0.95)
        }
        _ => base_beta,
    }
}

pub fn beta_distribution_change(changes: &[f64], base_beta: f64) -> f64 {
    let Some(&recent) = changes.last() else {
        return base_beta;
    };
    if recent > 0.5 {
        (base_beta - 0.2).max(0.5)
    } else if recent > 0.2 {
        (base_beta - 0.1).max(0.6)
    } else {
        (base_beta + 0.1).min(0.9)
    }
}

/// Shift between two task distributions: the change in imbalance ratio plus
/// the relative change in mean count. Lies in `[0, 2]`.
pub fn distribution_change_metric(prev: &DistributionSummary, curr: &DistributionSummary) -> f64 {
    let mean_scale = prev.mean.max(curr.mean);
    let mean_term = if mean_scale > 0.0 {
        (prev.mean - curr.mean).abs() / mean_scale
    } else {
        0.0
    };
    (prev.ratio - curr.ratio).abs() + mean_term
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtremaState {
    pub prior_min: Vec<f64>,
    pub prior_max: Vec<f64>,
    pub current_min: f64,
    pub current_max: f64,
}

/// Per-class count band the balancing loop aims for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub min: f64,
    pub max: f64,
}

/// Blend the latest prior extrema with the current ones. Without history the
/// current extrema pass through.
pub fn smoothed_targets(state: &ExtremaState, beta: f64) -> Result<Targets> {
    match (state.prior_min.last(), state.prior_max.last()) {
        (Some(&pmin), Some(&pmax)) => Ok(Targets {
            min: adjust_extrema(pmin, state.current_min, beta)?,
            max: adjust_extrema(pmax, state.current_max, beta)?,
        }),
        _ => Ok(Targets {
            min: state.current_min,
            max: state.current_max,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaState {
    pub base_beta: f64,
    pub strategy: BetaStrategy,
    pub performance_history: Vec<f64>,
    pub distribution_changes: Vec<f64>,
    /// 0-based index of the task about to be balanced.
    pub task_num: Option<i64>,
}

impl BetaState {
    pub fn new(strategy: BetaStrategy, base_beta: f64) -> Self {
        Self {
            base_beta,
            strategy,
            performance_history: Vec::new(),
            distribution_changes: Vec::new(),
            task_num: None,
        }
    }

    pub fn beta(&self) -> f64 {
        match self.strategy {
            BetaStrategy::Performance => beta_performance(&self.performance_history, self.base_beta),
            BetaStrategy::TaskProgress => beta_task_progress(self.task_num, self.base_beta),
            BetaStrategy::DistributionChange => {
                beta_distribution_change(&self.distribution_changes, self.base_beta)
            }
        }
    }
}

/// One task's smoothing decision, kept for the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingStep {
    pub task_index: usize,
    pub beta: f64,
    pub current_min: f64,
    pub current_max: f64,
    pub targets: Targets,
}

/// Sequential smoother advanced once per task boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smoother {
    pub beta: BetaState,
    pub extrema: ExtremaState,
    pub previous: Option<DistributionSummary>,
    pub trace: Vec<SmoothingStep>,
}

impl Smoother {
    pub fn new(strategy: BetaStrategy, base_beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&base_beta) {
            return Err(Error::config("smoother.base_beta", "must lie in [0, 1]"));
        }
        Ok(Self {
            beta: BetaState::new(strategy, base_beta),
            extrema: ExtremaState::default(),
            previous: None,
            trace: Vec::new(),
        })
    }

    /// Targets for task `task_index` (1-based) whose incoming distribution
    /// is `incoming`.
    pub fn begin_task(&mut self, task_index: usize, incoming: &DistributionSummary) -> Result<Targets> {
        self.beta.task_num = Some(task_index as i64 - 1);
        self.extrema.current_min = f64::from(incoming.min);
        self.extrema.current_max = f64::from(incoming.max);
        let beta = self.beta.beta();
        let targets = smoothed_targets(&self.extrema, beta)?;
        self.trace.push(SmoothingStep {
            task_index,
            beta,
            current_min: self.extrema.current_min,
            current_max: self.extrema.current_max,
            targets,
        });
        Ok(targets)
    }

    /// Record a finished task: the incoming distribution, the per-class
    /// counts the learner actually trained on, and the held-out accuracy on
    /// the task after fitting it.
    pub fn complete_task(&mut self, incoming: &DistributionSummary, trained_counts: &[u32], accuracy: f64) {
        let min = trained_counts.iter().copied().min().unwrap_or(0);
        let max = trained_counts.iter().copied().max().unwrap_or(0);
        self.extrema.prior_min.push(f64::from(min));
        self.extrema.prior_max.push(f64::from(max));
        self.beta.performance_history.push(accuracy);
        if let Some(prev) = &self.previous {
            self.beta
                .distribution_changes
                .push(distribution_change_metric(prev, incoming));
        }
        self.previous = Some(incoming.clone());
    }
}
