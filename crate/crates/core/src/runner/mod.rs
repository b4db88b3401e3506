//! End-to-end runs: evaluation, temperature sweep and ablation.

mod config;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use config::{BackendConfig, RunConfig};

use crate::analysis::{
    ablation_table, classify_alignment, temperature_stability, AlignmentReport, ReportFiles, SweepSample,
    TemperatureCurve, Thresholds, TrialFailure, TrialRecord,
};
use crate::backends::{
    Backend, CachedBackend, CompletionCache, CompletionRequest, HttpBackend, HttpConfig, NoisyMockBackend,
    ScriptedBackend,
};
use crate::certainty::{parse_certainty, parse_numeric_certainty, self_consistency_vote, CertaintyOutcome};
use crate::confidence::{
    adjusted_internal_confidence_with, build_option_token_map, extract_chosen_label, has_label_ambiguity,
};
use crate::dataset::{load_dataset, Dataset, DatasetManifest, Label, Question};
use crate::error::{Error, Result};
use crate::prompting::{PromptVariant, Templates};

/// Tallies recorded in the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub trials: usize,
    pub failed_trials: usize,
    pub parse_failures: usize,
    pub key_conflicts: usize,
    pub label_ambiguity_rate: f64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub rejected_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub backend_id: String,
    pub model: String,
    pub config: RunConfig,
    pub datasets: Vec<DatasetManifest>,
    pub counts: RunCounts,
    /// More than half of the trials failed.
    pub degraded: bool,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TrialRecord>,
    pub reports: ReportFiles,
    pub manifest: RunManifest,
}

impl RunOutput {
    /// Writes `records.jsonl`, `manifest.json` and the report files into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let mut written = self.reports.write(dir)?;
        let records = dir.join("records.jsonl");
        fs::write(&records, records_to_jsonl(&self.records)?).map_err(|e| Error::io(records.display(), e))?;
        written.push(records);
        let manifest = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(&manifest, body).map_err(|e| Error::io(manifest.display(), e))?;
        written.push(manifest);
        Ok(written)
    }
}

pub fn records_to_jsonl(records: &[TrialRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Groups records by dataset and variant and builds every report that applies.
///
/// Alignment reports use each group's lowest temperature and first sample, so a
/// sweep's repeated samples do not inflate the correlation. A temperature
/// curve is added when records span several temperatures, and an ablation
/// table when they span several variants.
pub fn build_reports(records: &[TrialRecord], thresholds: Thresholds) -> ReportFiles {
    let mut datasets: Vec<&str> = Vec::new();
    let mut variants: Vec<&str> = Vec::new();
    for r in records {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    let primary = |pred: &dyn Fn(&TrialRecord) -> bool| -> Vec<TrialRecord> {
        let group: Vec<&TrialRecord> = records.iter().filter(|r| pred(r)).collect();
        let t0 = group.iter().map(|r| r.temperature).fold(f64::INFINITY, f64::min);
        group
            .into_iter()
            .filter(|r| r.temperature == t0 && r.sample_index == 0)
            .cloned()
            .collect()
    };

    let mut reports = Vec::new();
    let mut cells = Vec::new();
    for v in &variants {
        for d in &datasets {
            let group = primary(&|r| r.variant == *v && r.dataset == *d);
            if group.is_empty() {
                continue;
            }
            reports.push(AlignmentReport::from_records(*v, &group, thresholds));
            cells.push((v.to_string(), d.to_string(), group));
        }
        if datasets.len() > 1 {
            let group = primary(&|r| r.variant == *v);
            reports.push(AlignmentReport::from_records(*v, &group, thresholds));
        }
    }

    let temps: BTreeSet<u64> = records.iter().map(|r| r.temperature.to_bits()).collect();
    let curves = if temps.len() > 1 {
        variants
            .iter()
            .map(|v| {
                let samples: Vec<SweepSample> = records
                    .iter()
                    .filter(|r| r.variant == *v)
                    .map(|r| SweepSample {
                        question_id: format!("{}/{}", r.dataset, r.question_id),
                        temperature: r.temperature,
                        sample_index: r.sample_index,
                        score: r.failure.is_none().then_some(r.verbalized_score).flatten(),
                        failure: r.failure.as_ref().map(|f| f.kind.clone()),
                    })
                    .collect();
                TemperatureCurve { variant: v.to_string(), points: temperature_stability(&samples) }
            })
            .collect()
    } else {
        Vec::new()
    };

    let ablation = (variants.len() > 1).then(|| ablation_table(&cells));
    ReportFiles { reports, curves, ablation }
}

/// Runs `f` over `items` on up to `workers` threads. Results keep input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every item processed"))
        .collect()
}

fn fail(stage: &str, e: &Error) -> TrialFailure {
    TrialFailure { stage: stage.to_string(), kind: e.kind().to_string(), message: e.to_string() }
}

/// The answer stage of a trial, shared by every certainty query about it.
#[derive(Debug, Clone)]
struct Answer {
    text: String,
    label: Label,
    internal_confidence: f64,
    ambiguity: bool,
    correct: Option<bool>,
}

/// Executes trials against one backend.
pub struct Runner {
    cfg: RunConfig,
    backend: Arc<CachedBackend>,
    templates: Templates,
    datasets: Vec<Dataset>,
}

impl Runner {
    /// Loads the datasets and builds the backend described by `cfg`.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let datasets = cfg.datasets.iter().map(load_dataset).collect::<Result<Vec<_>>>()?;
        let cache = Arc::new(match &cfg.cache {
            Some(p) => CompletionCache::open(p)?,
            None => CompletionCache::in_memory(),
        });
        let backend = match &cfg.backend {
            BackendConfig::Replay { backend_id, model } => {
                CachedBackend::replay_only(backend_id.clone(), model.clone(), cache)
            }
            other => CachedBackend::new(build_backend(other, cfg.seed)?, cache, cfg.cache_mode),
        };
        Ok(Runner { cfg, backend: Arc::new(backend), templates: Templates::builtin(), datasets })
    }

    /// Uses `inner` instead of the configured backend, still behind the configured cache.
    pub fn with_backend(cfg: RunConfig, inner: Arc<dyn Backend>, datasets: Vec<Dataset>) -> Result<Self> {
        cfg.validate()?;
        let cache = Arc::new(match &cfg.cache {
            Some(p) => CompletionCache::open(p)?,
            None => CompletionCache::in_memory(),
        });
        let backend = CachedBackend::new(inner, cache, cfg.cache_mode);
        Ok(Runner { cfg, backend: Arc::new(backend), templates: Templates::builtin(), datasets })
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn backend(&self) -> &CachedBackend {
        &self.backend
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    fn jobs(&self) -> Vec<(&str, &Question)> {
        self.datasets
            .iter()
            .flat_map(|d| d.questions.iter().map(move |q| (d.manifest.name.as_str(), q)))
            .collect()
    }

    fn answer(&self, q: &Question) -> std::result::Result<Answer, TrialFailure> {
        let mut req = CompletionRequest::new(self.templates.build_answer_prompt(q).map_err(|e| fail("prompt", &e))?);
        req.max_tokens = self.cfg.answer_max_tokens;
        req.top_candidates = self.cfg.top_candidates;
        let completion = self.backend.complete(&req).map_err(|e| fail("answer", &e))?;
        let label = extract_chosen_label(&completion.text, q).map_err(|e| fail("label", &e))?;
        let map = build_option_token_map(&q.labels());
        let dist = &completion.answer_position_distribution;
        let adjusted =
            adjusted_internal_confidence_with(dist, &map, label, self.cfg.numerator).map_err(|e| fail("confidence", &e))?;
        Ok(Answer {
            text: completion.text.trim().to_string(),
            label,
            internal_confidence: adjusted.internal_confidence,
            ambiguity: has_label_ambiguity(dist, &map),
            correct: q.gold_label().map(|g| g == label),
        })
    }

    /// Asks for certainty `variant.self_consistency_samples` times starting at
    /// `sample_base` and combines the replies.
    fn certainty(
        &self,
        q: &Question,
        answer: &str,
        variant: &PromptVariant,
        temperature: f64,
        sample_base: u32,
    ) -> std::result::Result<CertaintyOutcome, TrialFailure> {
        let prompt = self.templates.build_cqp(q, answer, variant).map_err(|e| fail("prompt", &e))?;
        let option_texts: Vec<&str> = q.options.iter().map(|o| o.text.as_str()).collect();
        let k = variant.self_consistency_samples.max(1);
        let mut outcomes = Vec::with_capacity(k as usize);
        for j in 0..k {
            let req = CompletionRequest {
                prompt: prompt.clone(),
                temperature,
                max_tokens: self.cfg.cqp_max_tokens,
                top_candidates: self.cfg.top_candidates,
                sample_index: sample_base + j,
            };
            let reply = self.backend.complete(&req).map_err(|e| fail("certainty", &e))?;
            outcomes.push(match variant.scale.likert() {
                Some(scale) => parse_certainty(&reply.text, scale, &option_texts),
                None => parse_numeric_certainty(&reply.text),
            });
        }
        Ok(if k == 1 { outcomes.pop().expect("one outcome") } else { self_consistency_vote(&outcomes) })
    }

    fn record(
        &self,
        dataset: &str,
        q: &Question,
        variant: &PromptVariant,
        answer: &std::result::Result<Answer, TrialFailure>,
        temperature: f64,
        sample_index: u32,
    ) -> TrialRecord {
        let mut rec = TrialRecord::new(q.id.clone(), variant.id());
        rec.dataset = dataset.to_string();
        rec.temperature = temperature;
        rec.sample_index = sample_index;
        let a = match answer {
            Ok(a) => a,
            Err(f) => {
                rec.failure = Some(f.clone());
                return rec;
            }
        };
        rec.answer_text = Some(a.text.clone());
        rec.chosen_label = Some(a.label);
        rec.internal_confidence = Some(a.internal_confidence);
        rec.label_ambiguity = a.ambiguity;
        rec.correct = a.correct;
        let base = sample_index * variant.self_consistency_samples.max(1);
        match self.certainty(q, &a.text, variant, temperature, base) {
            Ok(o) => {
                rec.certainty_text = Some(o.raw_text);
                rec.verbalized_category = o.category;
                rec.verbalized_score = o.score;
                rec.verbalized_failure = o.failure;
                rec.key_conflict = o.key_conflict;
                if let Some(vc) = o.score {
                    rec.taxonomy = Some(classify_alignment(a.internal_confidence, vc, self.cfg.thresholds));
                }
            }
            Err(f) => rec.failure = Some(f),
        }
        rec
    }

    /// One question under one variant at temperature `temperature`.
    pub fn run_trial(&self, dataset: &str, q: &Question, variant: &PromptVariant, temperature: f64) -> TrialRecord {
        let answer = self.answer(q);
        self.record(dataset, q, variant, &answer, temperature, 0)
    }

    fn evaluate_variant(&self, variant: &PromptVariant) -> Vec<TrialRecord> {
        let jobs = self.jobs();
        parallel_map(&jobs, self.cfg.concurrency, |(d, q)| {
            self.run_trial(d, q, variant, self.cfg.cqp_temperature)
        })
    }

    fn finish(&self, command: &str, started_at: String, hits0: u64, misses0: u64, records: Vec<TrialRecord>) -> RunOutput {
        let reports = build_reports(&records, self.cfg.thresholds);
        let trials = records.len();
        let failed_trials = records.iter().filter(|r| r.is_failed()).count();
        let ambiguous = records.iter().filter(|r| r.label_ambiguity).count();
        let counts = RunCounts {
            trials,
            failed_trials,
            parse_failures: records.iter().filter(|r| r.verbalized_failure.is_some()).count()
                + records.iter().filter(|r| r.failure.as_ref().is_some_and(|f| f.stage == "label")).count(),
            key_conflicts: records.iter().filter(|r| r.key_conflict).count(),
            label_ambiguity_rate: if trials > 0 { ambiguous as f64 / trials as f64 } else { 0.0 },
            cache_hits: self.backend.hits() - hits0,
            cache_misses: self.backend.misses() - misses0,
            rejected_lines: self.datasets.iter().map(|d| d.rejected.len()).sum(),
        };
        let degraded = failed_trials * 2 > trials;
        if degraded {
            log::warn!("{failed_trials} of {trials} trials failed; run is degraded");
        }
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at,
            finished_at: now(),
            backend_id: self.backend.id().to_string(),
            model: self.backend.model().to_string(),
            config: self.cfg.clone(),
            datasets: self.datasets.iter().map(|d| d.manifest.clone()).collect(),
            counts,
            degraded,
        };
        RunOutput { records, reports, manifest }
    }

    /// Every question under the configured variant.
    pub fn evaluate(&self) -> RunOutput {
        let (started, h, m) = (now(), self.backend.hits(), self.backend.misses());
        let records = self.evaluate_variant(&self.cfg.variant);
        self.finish("run", started, h, m, records)
    }

    /// Every question at every temperature of the grid, `samples` times each.
    /// The answer is elicited once per question, greedily.
    pub fn sweep(&self) -> RunOutput {
        let (started, h, m) = (now(), self.backend.hits(), self.backend.misses());
        let variant = self.cfg.variant;
        let jobs = self.jobs();
        let per_question = parallel_map(&jobs, self.cfg.concurrency, |(d, q)| {
            let answer = self.answer(q);
            let mut out = Vec::new();
            for &t in &self.cfg.temperatures {
                for s in 0..self.cfg.samples {
                    out.push(self.record(d, q, &variant, &answer, t, s));
                }
            }
            out
        });
        self.finish("sweep", started, h, m, per_question.into_iter().flatten().collect())
    }

    /// Every configured variant over every question. Answers are elicited with
    /// identical requests for all variants, so the cache serves all but the first.
    pub fn ablate(&self) -> RunOutput {
        let (started, h, m) = (now(), self.backend.hits(), self.backend.misses());
        let records = self
            .cfg
            .ablation_variants()
            .iter()
            .flat_map(|v| self.evaluate_variant(v))
            .collect();
        self.finish("ablate", started, h, m, records)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn build_backend(cfg: &BackendConfig, default_seed: u64) -> Result<Arc<dyn Backend>> {
    Ok(match cfg {
        BackendConfig::Http { base_url, model, min_interval_ms } => {
            let mut http = match base_url {
                Some(url) => {
                    let mut c = HttpConfig::new(url.clone(), model.clone());
                    c.api_key = std::env::var(crate::backends::API_KEY_ENV).ok().filter(|k| !k.is_empty());
                    c
                }
                None => HttpConfig::from_env(model.clone())?,
            };
            http.min_interval = Duration::from_millis(*min_interval_ms);
            Arc::new(HttpBackend::new(http)?)
        }
        BackendConfig::Scripted { script, default_certainty } => {
            let mut b = ScriptedBackend::from_file("mock:scripted", script)?;
            if let Some(reply) = default_certainty {
                b = b.with_default_certainty(reply.clone());
            }
            Arc::new(b)
        }
        BackendConfig::Noisy { seed, amplitude } => {
            let mut b = NoisyMockBackend::new(seed.unwrap_or(default_seed));
            if let Some(a) = amplitude {
                b = b.with_amplitude(*a);
            }
            Arc::new(b)
        }
        BackendConfig::Replay { .. } => unreachable!("replay is handled by the caller"),
    })
}

pub fn run_evaluation(cfg: &RunConfig) -> Result<RunOutput> {
    Ok(Runner::new(cfg.clone())?.evaluate())
}

pub fn run_temperature_sweep(cfg: &RunConfig) -> Result<RunOutput> {
    Ok(Runner::new(cfg.clone())?.sweep())
}

pub fn run_ablation(cfg: &RunConfig) -> Result<RunOutput> {
    Ok(Runner::new(cfg.clone())?.ablate())
}

/// Rebuilds the report files from a directory holding `records.jsonl` and,
/// optionally, the `manifest.json` of the run that produced it.
pub fn report_from_dir(dir: impl AsRef<Path>) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    let records = read_records(dir.join("records.jsonl"))?;
    let manifest_path = dir.join("manifest.json");
    let thresholds = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(manifest_path.display(), e))?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        manifest.config.thresholds
    } else {
        Thresholds::default()
    };
    Ok(build_reports(&records, thresholds))
}
