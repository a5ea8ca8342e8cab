use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluator::{Breakdown, ClassGroup};
use crate::patcher::BalanceFooter;
use crate::smoother::SmoothingStep;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Panda,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Panda => "panda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class_id: u32,
    pub label: String,
    pub group: ClassGroup,
    /// Original train items, before augmentation.
    pub train_count: usize,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResults {
    /// Row m holds accuracy on tasks 1..=m after training through task m.
    pub accuracy_matrix: Vec<Vec<f64>>,
    /// A_k for k = 1..=T.
    pub average_accuracy: Vec<f64>,
    /// Forgetting after the last task; absent for single-task streams.
    pub final_average_forgetting: Option<f64>,
    /// Final-step accuracy by head/tail group.
    pub breakdown: Breakdown,
    pub classes: Vec<ClassResult>,
}

impl EvalResults {
    pub fn final_accuracy(&self) -> f64 {
        *self.average_accuracy.last().expect("reports cover at least one task")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub variant: Variant,
    pub plan_digest: String,
    pub seed: u64,
    pub config: RunConfig,
    pub results: EvalResults,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<Vec<SmoothingStep>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Vec<BalanceFooter>>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("eval report: {e}")))?;
        if report.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "eval report format_version {} (expected {REPORT_FORMAT_VERSION})",
                report.format_version
            )));
        }
        Ok(report)
    }

    /// One `m,n,accuracy` row per defined matrix entry, 1-based.
    pub fn matrix_csv(&self) -> String {
        let mut out = String::from("m,n,accuracy\n");
        for (m, row) in self.results.accuracy_matrix.iter().enumerate() {
            for (n, acc) in row.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", m + 1, n + 1, acc);
            }
        }
        out
    }

    pub fn synthesized(&self) -> usize {
        self.augmentation
            .as_ref()
            .map_or(0, |f| f.iter().map(|x| x.syntheses).sum())
    }
}

pub struct Comparison {
    pub table: String,
    /// `report,variant,k,average_accuracy` rows.
    pub curve_csv: String,
    /// `report,variant,avg_acc,avg_for,head_acc,tail_acc,delta_acc,delta_for` rows.
    pub summary_csv: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn fmt_delta(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:+.4}"))
}

/// Tabulate final average accuracy and forgetting; deltas are taken against
/// the first report. Reports must share a plan digest.
pub fn compare_reports(reports: &[(String, EvalReport)]) -> Result<Comparison> {
    let (_, first) = reports.first().ok_or(Error::Empty("report list"))?;
    for (name, r) in reports {
        if r.plan_digest != first.plan_digest {
            return Err(Error::Format(format!(
                "{name} was produced from plan {} but the first report used {}",
                r.plan_digest, first.plan_digest
            )));
        }
    }
    let with_delta = reports.len() > 1;
    let base_acc = first.results.final_accuracy();
    let base_for = first.results.final_average_forgetting;

    let name_width = reports.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut table = format!(
        "{:<name_width$}  {:<8}  {:>8}  {:>8}  {:>8}  {:>8}",
        "report", "variant", "avg_acc", "avg_for", "head_acc", "tail_acc"
    );
    if with_delta {
        table.push_str(&format!("  {:>8}  {:>8}", "d_acc", "d_for"));
    }
    table.push('\n');
    let mut curve_csv = String::from("report,variant,k,average_accuracy\n");
    let mut summary_csv = String::from("report,variant,avg_acc,avg_for,head_acc,tail_acc,delta_acc,delta_for\n");

    for (name, r) in reports {
        let res = &r.results;
        let acc = res.final_accuracy();
        let forgetting = res.final_average_forgetting;
        let head = res.breakdown.head.accuracy();
        let tail = res.breakdown.tail.accuracy();
        let d_acc = acc - base_acc;
        let d_for = forgetting.zip(base_for).map(|(a, b)| a - b);
        let _ = write!(
            table,
            "{:<name_width$}  {:<8}  {:>8.4}  {:>8}  {:>8}  {:>8}",
            name,
            r.variant.name(),
            acc,
            fmt_opt(forgetting),
            fmt_opt(head),
            fmt_opt(tail)
        );
        if with_delta {
            let _ = write!(table, "  {:>8}  {:>8}", fmt_delta(Some(d_acc)), fmt_delta(d_for));
        }
        table.push('\n');
        for (k, a) in res.average_accuracy.iter().enumerate() {
            let _ = writeln!(curve_csv, "{name},{},{},{a}", r.variant.name(), k + 1);
        }
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let _ = writeln!(
            summary_csv,
            "{name},{},{acc},{},{},{},{},{}",
            r.variant.name(),
            opt(forgetting),
            opt(head),
            opt(tail),
            if with_delta { d_acc.to_string() } else { String::new() },
            if with_delta { opt(d_for) } else { String::new() },
        );
    }
    Ok(Comparison {
        table,
        curve_csv,
        summary_csv,
    })
}
