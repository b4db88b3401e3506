//! Alignment statistics over trial records.

mod report;
mod spearman;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::certainty::CertaintyFailure;
use crate::dataset::Label;

pub use report::{
    render_ablation_markdown, render_alignment_table, AblationTable, AlignmentReport, ReportFiles, TemperatureCurve,
};
pub use spearman::{
    midranks, permutation_p_value, spearman_closed_form, spearman_rho, t_test_p_value, CorrelationResult,
};

/// Where a trial stopped, if it did not complete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub stage: String,
    pub kind: String,
    pub message: String,
}

/// One question's outcome under one prompt variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub dataset: String,
    pub question_id: String,
    pub variant: String,
    pub temperature: f64,
    pub sample_index: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub answer_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chosen_label: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub internal_confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub certainty_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verbalized_category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verbalized_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verbalized_failure: Option<CertaintyFailure>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub key_conflict: bool,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub label_ambiguity: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub taxonomy: Option<TaxonomyLabel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<TrialFailure>,
}

impl TrialRecord {
    pub fn new(question_id: impl Into<String>, variant: impl Into<String>) -> Self {
        TrialRecord {
            dataset: String::new(),
            question_id: question_id.into(),
            variant: variant.into(),
            temperature: 0.0,
            sample_index: 0,
            answer_text: None,
            chosen_label: None,
            internal_confidence: None,
            certainty_text: None,
            verbalized_category: None,
            verbalized_score: None,
            verbalized_failure: None,
            key_conflict: false,
            label_ambiguity: false,
            correct: None,
            taxonomy: None,
            failure: None,
        }
    }

    /// Both confidence measures are available.
    pub fn paired(&self) -> Option<(f64, f64)> {
        match (self.failure.as_ref(), self.internal_confidence, self.verbalized_score) {
            (None, Some(ic), Some(vc)) => Some((ic, vc)),
            _ => None,
        }
    }

    /// Any stage failed or the certainty reply could not be scored.
    pub fn is_failed(&self) -> bool {
        self.failure.is_some() || self.verbalized_failure.is_some() || self.verbalized_score.is_none()
    }
}

/// Spearman correlation over the records that carry both measures.
pub fn records_correlation(records: &[TrialRecord]) -> CorrelationResult {
    let (x, y): (Vec<f64>, Vec<f64>) = records.iter().filter_map(TrialRecord::paired).unzip();
    if x.len() < 2 {
        return CorrelationResult::undefined(x.len());
    }
    spearman_rho(&x, &y).unwrap_or(CorrelationResult::undefined(x.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyLabel {
    ConsistentAlignment,
    InternalOverconfidence,
    ExternalOverconfidence,
    ConsistentDiscordance,
}

impl TaxonomyLabel {
    pub const ALL: [TaxonomyLabel; 4] = [
        TaxonomyLabel::ConsistentAlignment,
        TaxonomyLabel::InternalOverconfidence,
        TaxonomyLabel::ExternalOverconfidence,
        TaxonomyLabel::ConsistentDiscordance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaxonomyLabel::ConsistentAlignment => "Consistent Alignment",
            TaxonomyLabel::InternalOverconfidence => "Internal Overconfidence",
            TaxonomyLabel::ExternalOverconfidence => "External Overconfidence",
            TaxonomyLabel::ConsistentDiscordance => "Consistent Discordance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub ic_high: f64,
    pub vc_high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { ic_high: 0.9, vc_high: 0.8 }
    }
}

pub fn classify_alignment(internal: f64, verbalized: f64, t: Thresholds) -> TaxonomyLabel {
    match (internal >= t.ic_high, verbalized >= t.vc_high) {
        (true, true) => TaxonomyLabel::ConsistentAlignment,
        (true, false) => TaxonomyLabel::InternalOverconfidence,
        (false, true) => TaxonomyLabel::ExternalOverconfidence,
        (false, false) => TaxonomyLabel::ConsistentDiscordance,
    }
}

pub fn taxonomy_counts(records: &[TrialRecord], t: Thresholds) -> BTreeMap<TaxonomyLabel, usize> {
    let mut counts: BTreeMap<TaxonomyLabel, usize> = TaxonomyLabel::ALL.iter().map(|l| (*l, 0)).collect();
    for (ic, vc) in records.iter().filter_map(TrialRecord::paired) {
        *counts.entry(classify_alignment(ic, vc, t)).or_default() += 1;
    }
    counts
}

/// 2x2 table of certainty bucket against correctness, in percent.
/// `+` is the high bucket, `-` the low one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub plus_correct: f64,
    pub plus_incorrect: f64,
    pub minus_correct: f64,
    pub minus_incorrect: f64,
    /// Records counted in the cells.
    pub n: usize,
    /// Fraction of eligible records left out of the cells.
    pub residual: f64,
}

impl ConfusionMatrix {
    pub fn empty() -> Self {
        ConfusionMatrix { plus_correct: 0.0, plus_incorrect: 0.0, minus_correct: 0.0, minus_incorrect: 0.0, n: 0, residual: 0.0 }
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn cells(&self) -> [f64; 4] {
        [self.plus_correct, self.plus_incorrect, self.minus_correct, self.minus_incorrect]
    }

    fn from_counts(counts: [usize; 4], eligible: usize) -> Self {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return ConfusionMatrix { residual: if eligible > 0 { 1.0 } else { 0.0 }, ..Self::empty() };
        }
        let pct = |c: usize| 100.0 * c as f64 / n as f64;
        ConfusionMatrix {
            plus_correct: pct(counts[0]),
            plus_incorrect: pct(counts[1]),
            minus_correct: pct(counts[2]),
            minus_incorrect: pct(counts[3]),
            n,
            residual: if eligible > 0 { (eligible - n) as f64 / eligible as f64 } else { 0.0 },
        }
    }
}

fn cell(plus: bool, correct: bool) -> usize {
    match (plus, correct) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

/// Verbalized certainty against correctness, restricted to replies of
/// "very certain" (`+`) or "fairly certain" (`-`).
pub fn verbal_confusion_matrix(records: &[TrialRecord]) -> ConfusionMatrix {
    let mut counts = [0usize; 4];
    let mut eligible = 0;
    for r in records {
        let (Some(correct), Some(_)) = (r.correct, r.verbalized_score) else {
            continue;
        };
        if r.failure.is_some() {
            continue;
        }
        eligible += 1;
        match r.verbalized_category.as_deref() {
            Some("very certain") => counts[cell(true, correct)] += 1,
            Some("fairly certain") => counts[cell(false, correct)] += 1,
            _ => {}
        }
    }
    ConfusionMatrix::from_counts(counts, eligible)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Internal confidence against correctness, split at the median: strictly
/// above is `+`, at or below is `-`.
pub fn internal_confusion_matrix(records: &[TrialRecord]) -> ConfusionMatrix {
    let eligible: Vec<(f64, bool)> = records
        .iter()
        .filter(|r| r.failure.is_none())
        .filter_map(|r| Some((r.internal_confidence?, r.correct?)))
        .collect();
    if eligible.len() < 2 {
        return ConfusionMatrix::empty();
    }
    let ics: Vec<f64> = eligible.iter().map(|(ic, _)| *ic).collect();
    let med = median(&ics).expect("nonempty");
    let mut counts = [0usize; 4];
    for (ic, correct) in &eligible {
        counts[cell(*ic > med, *correct)] += 1;
    }
    ConfusionMatrix::from_counts(counts, eligible.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub percent: f64,
    pub count: usize,
}

fn to_bins(edges: &[(f64, f64)], counts: &[usize]) -> Vec<HistogramBin> {
    let total: usize = counts.iter().sum();
    edges
        .iter()
        .zip(counts)
        .map(|(&(low, high), &count)| HistogramBin {
            low,
            high,
            count,
            percent: if total > 0 { 100.0 * count as f64 / total as f64 } else { 0.0 },
        })
        .collect()
}

pub const CERTAINTY_LEVELS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Verbalized scores tallied at the six Likert levels. Scores off the levels
/// (numerical replies) go to the nearest level.
pub fn certainty_histogram(records: &[TrialRecord]) -> Vec<HistogramBin> {
    let mut counts = [0usize; 6];
    for r in records.iter().filter(|r| r.failure.is_none()) {
        if let Some(s) = r.verbalized_score {
            let idx = (s * 5.0).round().clamp(0.0, 5.0) as usize;
            counts[idx] += 1;
        }
    }
    let edges: Vec<(f64, f64)> = CERTAINTY_LEVELS.iter().map(|&l| (l, l)).collect();
    to_bins(&edges, &counts)
}

/// Internal confidence in ten equal bins over [0, 1]; the last bin is closed.
pub fn confidence_histogram(records: &[TrialRecord]) -> Vec<HistogramBin> {
    let mut counts = [0usize; 10];
    for r in records.iter().filter(|r| r.failure.is_none()) {
        if let Some(ic) = r.internal_confidence {
            let idx = ((ic * 10.0).floor() as usize).min(9);
            counts[idx] += 1;
        }
    }
    let edges: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 / 10.0, (i + 1) as f64 / 10.0)).collect();
    to_bins(&edges, &counts)
}

/// One verbalized score from a temperature sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub question_id: String,
    pub temperature: f64,
    pub sample_index: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperaturePoint {
    pub temperature: f64,
    /// Mean over questions of the population standard deviation of their scores.
    pub avg_std: f64,
    pub questions: usize,
    /// (question, temperature) pairs dropped for having fewer than two scores.
    pub excluded: usize,
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.len() < 2 || values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Average per-question spread of verbalized scores at each temperature,
/// in ascending temperature order.
pub fn temperature_stability(samples: &[SweepSample]) -> Vec<TemperaturePoint> {
    let mut grouped: BTreeMap<u64, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    let mut temps: BTreeMap<u64, f64> = BTreeMap::new();
    let key = |t: f64| (t * 1e6).round() as u64;
    for s in samples {
        temps.entry(key(s.temperature)).or_insert(s.temperature);
        let per_q = grouped.entry(key(s.temperature)).or_default();
        let scores = per_q.entry(s.question_id.as_str()).or_default();
        if let Some(v) = s.score {
            scores.push(v);
        }
    }
    grouped
        .into_iter()
        .map(|(k, per_q)| {
            let mut stds = Vec::new();
            let mut excluded = 0;
            for (qid, scores) in &per_q {
                if scores.len() < 2 {
                    log::warn!("question {qid} has {} usable samples at temperature {}; excluded", scores.len(), temps[&k]);
                    excluded += 1;
                } else {
                    stds.push(population_std(scores));
                }
            }
            let avg_std = if stds.is_empty() { 0.0 } else { stds.iter().sum::<f64>() / stds.len() as f64 };
            TemperaturePoint { temperature: temps[&k], avg_std, questions: stds.len(), excluded }
        })
        .collect()
}

/// Builds the variant x dataset correlation matrix. Cells with fewer than
/// three paired observations are undefined.
pub fn ablation_table(cells: &[(String, String, Vec<TrialRecord>)]) -> AblationTable {
    let mut variants: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    for (v, d, _) in cells {
        if !variants.contains(v) {
            variants.push(v.clone());
        }
        if !datasets.contains(d) {
            datasets.push(d.clone());
        }
    }
    let mut matrix = vec![vec![CorrelationResult::undefined(0); datasets.len()]; variants.len()];
    for (v, d, records) in cells {
        let vi = variants.iter().position(|x| x == v).expect("variant listed");
        let di = datasets.iter().position(|x| x == d).expect("dataset listed");
        let r = records_correlation(records);
        matrix[vi][di] = if r.n >= 3 { r } else { CorrelationResult::undefined(r.n) };
    }
    let best = (0..datasets.len())
        .map(|di| {
            let mut best: Option<(usize, f64)> = None;
            for (vi, row) in matrix.iter().enumerate() {
                if let Some(rho) = row[di].rho {
                    if best.is_none_or(|(_, b)| rho > b) {
                        best = Some((vi, rho));
                    }
                }
            }
            best.map(|(vi, _)| vi)
        })
        .collect();
    AblationTable { variants, datasets, cells: matrix, best }
}
