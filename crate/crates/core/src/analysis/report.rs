//! Report assembly and the on-disk report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    certainty_histogram, confidence_histogram, internal_confusion_matrix, records_correlation, taxonomy_counts,
    verbal_confusion_matrix, ConfusionMatrix, CorrelationResult, HistogramBin, TaxonomyLabel, TemperaturePoint,
    Thresholds, TrialRecord,
};
use crate::certainty::CertaintyFailure;
use crate::error::{Error, Result};

/// Summary of one variant over one set of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// Dataset shared by all records, or `all` when they span several.
    pub dataset: String,
    pub variant: String,
    pub thresholds: Thresholds,
    pub total: usize,
    pub paired: usize,
    pub correlation: CorrelationResult,
    pub taxonomy: BTreeMap<TaxonomyLabel, usize>,
    /// Trials whose certainty reply could not be scored, by failure class.
    pub verbal_failures: BTreeMap<CertaintyFailure, usize>,
    /// Trials that stopped before a certainty reply was parsed, by error kind.
    pub stage_failures: BTreeMap<String, usize>,
    pub label_ambiguity: usize,
    pub key_conflicts: usize,
    pub accuracy: Option<f64>,
    pub verbal_matrix: ConfusionMatrix,
    pub internal_matrix: ConfusionMatrix,
    pub certainty_histogram: Vec<HistogramBin>,
    pub confidence_histogram: Vec<HistogramBin>,
}

impl AlignmentReport {
    pub fn from_records(variant: impl Into<String>, records: &[TrialRecord], thresholds: Thresholds) -> Self {
        let mut verbal_failures = BTreeMap::new();
        let mut stage_failures = BTreeMap::new();
        for r in records {
            if let Some(f) = &r.failure {
                *stage_failures.entry(f.kind.clone()).or_insert(0) += 1;
            } else if let Some(f) = r.verbalized_failure {
                *verbal_failures.entry(f).or_insert(0) += 1;
            } else if r.internal_confidence.is_none() || r.verbalized_score.is_none() {
                *stage_failures.entry("incomplete".to_string()).or_insert(0) += 1;
            }
        }
        let graded: Vec<bool> = records.iter().filter(|r| r.failure.is_none()).filter_map(|r| r.correct).collect();
        let accuracy = (!graded.is_empty())
            .then(|| graded.iter().filter(|c| **c).count() as f64 / graded.len() as f64);
        let dataset = match records.first() {
            Some(first) if records.iter().all(|r| r.dataset == first.dataset) => first.dataset.clone(),
            _ => "all".to_string(),
        };
        AlignmentReport {
            dataset,
            variant: variant.into(),
            thresholds,
            total: records.len(),
            paired: records.iter().filter(|r| r.paired().is_some()).count(),
            correlation: records_correlation(records),
            taxonomy: taxonomy_counts(records, thresholds),
            verbal_failures,
            stage_failures,
            label_ambiguity: records.iter().filter(|r| r.label_ambiguity).count(),
            key_conflicts: records.iter().filter(|r| r.key_conflict).count(),
            accuracy,
            verbal_matrix: verbal_confusion_matrix(records),
            internal_matrix: internal_confusion_matrix(records),
            certainty_histogram: certainty_histogram(records),
            confidence_histogram: confidence_histogram(records),
        }
    }

    /// Taxonomy counts plus both failure tallies; equals `total` for any report
    /// built by [`AlignmentReport::from_records`].
    pub fn accounted(&self) -> usize {
        self.taxonomy.values().sum::<usize>()
            + self.verbal_failures.values().sum::<usize>()
            + self.stage_failures.values().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureCurve {
    pub variant: String,
    pub points: Vec<TemperaturePoint>,
}

impl TemperatureCurve {
    pub fn is_non_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].avg_std >= w[0].avg_std)
    }
}

/// Spearman correlation per prompt variant (rows) and dataset (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub variants: Vec<String>,
    pub datasets: Vec<String>,
    pub cells: Vec<Vec<CorrelationResult>>,
    /// Row index of the highest correlation in each column.
    pub best: Vec<Option<usize>>,
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn opt4(v: Option<f64>) -> String {
    v.map(f4).unwrap_or_else(|| "n/a".to_string())
}

/// One row per report: correlation, sample size and taxonomy shares.
pub fn render_alignment_table(reports: &[AlignmentReport]) -> String {
    let mut out = String::from("| Dataset | Variant | n | Spearman rho | p-value |");
    for label in TaxonomyLabel::ALL {
        let _ = write!(out, " {} |", label.name());
    }
    out.push_str("\n|---|---|---|---|---|");
    out.push_str(&"---|".repeat(TaxonomyLabel::ALL.len()));
    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "| {} | {} | {} | {} | {} |",
            r.dataset,
            r.variant,
            r.correlation.n,
            opt4(r.correlation.rho),
            opt4(r.correlation.p_value)
        );
        let paired = r.paired.max(1) as f64;
        for label in TaxonomyLabel::ALL {
            let c = r.taxonomy.get(&label).copied().unwrap_or(0);
            let _ = write!(out, " {} ({:.1}%) |", c, 100.0 * c as f64 / paired);
        }
        out.push('\n');
    }
    out
}

/// Variant x dataset table with the best cell of each column in bold.
pub fn render_ablation_markdown(table: &AblationTable) -> String {
    let mut out = String::from("| Variant |");
    for d in &table.datasets {
        let _ = write!(out, " {d} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(table.datasets.len()));
    out.push('\n');
    for (vi, v) in table.variants.iter().enumerate() {
        let _ = write!(out, "| {v} |");
        for (di, cell) in table.cells[vi].iter().enumerate() {
            let text = opt4(cell.rho);
            if table.best[di] == Some(vi) {
                let _ = write!(out, " **{text}** |");
            } else {
                let _ = write!(out, " {text} |");
            }
        }
        out.push('\n');
    }
    out
}

fn render_matrix(out: &mut String, title: &str, m: &ConfusionMatrix) {
    let _ = writeln!(out, "### {title}\n");
    if m.is_empty() {
        out.push_str("No eligible records.\n\n");
        return;
    }
    out.push_str("| | Correct | Incorrect |\n|---|---|---|\n");
    let _ = writeln!(out, "| + | {} | {} |", f4(m.plus_correct), f4(m.plus_incorrect));
    let _ = writeln!(out, "| - | {} | {} |", f4(m.minus_correct), f4(m.minus_incorrect));
    let _ = writeln!(out, "\nn = {}, residual = {}\n", m.n, f4(m.residual));
}

fn render_report_markdown(files: &ReportFiles) -> String {
    let mut out = String::from("# Confidence alignment report\n\n## Correlation and taxonomy\n\n");
    out.push_str(&render_alignment_table(&files.reports));
    for r in &files.reports {
        let _ = writeln!(out, "\n## {} / {}\n", r.dataset, r.variant);
        let _ = writeln!(out, "- trials: {}", r.total);
        let _ = writeln!(out, "- paired: {}", r.paired);
        let _ = writeln!(out, "- accuracy: {}", opt4(r.accuracy));
        let _ = writeln!(out, "- label ambiguity: {}", r.label_ambiguity);
        let _ = writeln!(out, "- key conflicts: {}", r.key_conflicts);
        for (f, c) in &r.verbal_failures {
            let _ = writeln!(out, "- certainty failure {}: {c}", f.as_str());
        }
        for (k, c) in &r.stage_failures {
            let _ = writeln!(out, "- stage failure {k}: {c}");
        }
        out.push('\n');
        render_matrix(&mut out, "Verbalized certainty vs correctness (%)", &r.verbal_matrix);
        render_matrix(&mut out, "Internal confidence vs correctness (%)", &r.internal_matrix);
    }
    if let Some(t) = &files.ablation {
        out.push_str("## Ablation (Spearman rho)\n\n");
        out.push_str(&render_ablation_markdown(t));
        out.push('\n');
    }
    for c in &files.curves {
        let _ = writeln!(out, "## Temperature stability: {}\n", c.variant);
        out.push_str("| Temperature | Avg std | Questions | Excluded |\n|---|---|---|---|\n");
        for p in &c.points {
            let _ = writeln!(out, "| {} | {} | {} | {} |", f4(p.temperature), f4(p.avg_std), p.questions, p.excluded);
        }
        out.push('\n');
    }
    out
}

fn render_matrices_csv(reports: &[AlignmentReport]) -> String {
    let mut out = String::from("dataset,variant,matrix,bucket,outcome,percent,n,residual\n");
    for r in reports {
        for (name, m) in [("verbal", &r.verbal_matrix), ("internal", &r.internal_matrix)] {
            let cells = [("+", "correct"), ("+", "incorrect"), ("-", "correct"), ("-", "incorrect")];
            for ((bucket, outcome), v) in cells.iter().zip(m.cells()) {
                let _ = writeln!(out, "{},{},{name},{bucket},{outcome},{},{},{}", r.dataset, r.variant, f4(v), m.n, f4(m.residual));
            }
        }
    }
    out
}

fn render_histogram_csv(reports: &[AlignmentReport]) -> String {
    let mut out = String::from("dataset,variant,histogram,low,high,count,percent\n");
    for r in reports {
        for (name, bins) in [("verbalized", &r.certainty_histogram), ("internal", &r.confidence_histogram)] {
            for b in bins {
                let _ = writeln!(out, "{},{},{name},{},{},{},{}", r.dataset, r.variant, f4(b.low), f4(b.high), b.count, f4(b.percent));
            }
        }
    }
    out
}

fn render_curve_csv(curves: &[TemperatureCurve]) -> String {
    let mut out = String::from("variant,temperature,avg_std,questions,excluded\n");
    for c in curves {
        for p in &c.points {
            let _ = writeln!(out, "{},{},{},{},{}", c.variant, f4(p.temperature), f4(p.avg_std), p.questions, p.excluded);
        }
    }
    out
}

/// Everything that goes into a report directory. Output carries no
/// timestamps, so identical inputs give byte-identical files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub reports: Vec<AlignmentReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub curves: Vec<TemperatureCurve>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ablation: Option<AblationTable>,
}

impl ReportFiles {
    /// Renders each file as `(file name, contents)`.
    pub fn render(&self) -> Result<Vec<(&'static str, String)>> {
        let mut files = vec![
            ("report.json", serde_json::to_string_pretty(self)? + "\n"),
            ("report.md", render_report_markdown(self)),
            ("matrices.csv", render_matrices_csv(&self.reports)),
            ("histogram.csv", render_histogram_csv(&self.reports)),
        ];
        if !self.curves.is_empty() {
            files.push(("temperature_curve.csv", render_curve_csv(&self.curves)));
        }
        Ok(files)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
        let mut written = Vec::new();
        for (name, body) in self.render()? {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path.display(), e))?;
            written.push(path);
        }
        Ok(written)
    }
}
