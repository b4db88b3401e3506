use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::Thresholds;
use crate::backends::{CacheMode, DEFAULT_TOP_CANDIDATES, MIN_TOP_CANDIDATES_FOR_CONFIDENCE};
use crate::confidence::NumeratorMode;
use crate::error::{Error, Result};
use crate::prompting::{enumerate_ablation_variants, PromptVariant};

/// Which model to talk to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Completions endpoint. `base_url` falls back to `CONFALIGN_BASE_URL`.
    Http {
        #[serde(default)]
        base_url: Option<String>,
        model: String,
        /// Minimum milliseconds between request starts.
        #[serde(default)]
        min_interval_ms: u64,
    },
    /// Fixed replies from a JSONL script file.
    Scripted {
        script: PathBuf,
        #[serde(default)]
        default_certainty: Option<String>,
    },
    /// Seeded stochastic mock.
    Noisy {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        amplitude: Option<f64>,
    },
    /// Cache-only playback of an earlier run under the recorded identity.
    Replay { backend_id: String, model: String },
}

fn default_temperatures() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}

fn default_samples() -> u32 {
    5
}

fn default_concurrency() -> usize {
    4
}

fn default_answer_max_tokens() -> u32 {
    10
}

fn default_cqp_max_tokens() -> u32 {
    200
}

fn default_top_candidates() -> u32 {
    DEFAULT_TOP_CANDIDATES
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_cache_mode() -> CacheMode {
    CacheMode::Record
}

/// Run configuration, usually read from TOML.
///
/// ```toml
/// datasets = ["data/sample_mcq.jsonl"]
/// output_dir = "out"
///
/// [backend]
/// kind = "noisy"
/// seed = 7
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: Vec<PathBuf>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub variant: PromptVariant,
    /// Variants compared by `ablate`. Defaults to the five component combinations.
    #[serde(default)]
    pub ablation_variants: Option<Vec<PromptVariant>>,
    /// Temperature for certainty queries in `run` and `ablate`.
    #[serde(default)]
    pub cqp_temperature: f64,
    /// Temperatures visited by `sweep`.
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    /// Certainty samples per question and temperature in `sweep`.
    #[serde(default = "default_samples")]
    pub samples: u32,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub numerator: NumeratorMode,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default = "default_cache_mode")]
    pub cache_mode: CacheMode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Seed for stochastic backends that do not set their own.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_answer_max_tokens")]
    pub answer_max_tokens: u32,
    #[serde(default = "default_cqp_max_tokens")]
    pub cqp_max_tokens: u32,
    #[serde(default = "default_top_candidates")]
    pub top_candidates: u32,
}

impl RunConfig {
    pub fn new(datasets: Vec<PathBuf>, backend: BackendConfig) -> Self {
        RunConfig {
            datasets,
            backend,
            variant: PromptVariant::default(),
            ablation_variants: None,
            cqp_temperature: 0.0,
            temperatures: default_temperatures(),
            samples: default_samples(),
            thresholds: Thresholds::default(),
            numerator: NumeratorMode::default(),
            cache: None,
            cache_mode: CacheMode::Record,
            output_dir: default_output_dir(),
            concurrency: default_concurrency(),
            seed: 0,
            answer_max_tokens: default_answer_max_tokens(),
            cqp_max_tokens: default_cqp_max_tokens(),
            top_candidates: default_top_candidates(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file. Relative paths inside it resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.datasets.iter_mut().for_each(fix);
        if let Some(c) = self.cache.as_mut() {
            fix(c);
        }
        fix(&mut self.output_dir);
        if let BackendConfig::Scripted { script, .. } = &mut self.backend {
            fix(script);
        }
    }

    pub fn ablation_variants(&self) -> Vec<PromptVariant> {
        self.ablation_variants.clone().unwrap_or_else(enumerate_ablation_variants)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.datasets.is_empty() {
            return bad("no datasets configured".into());
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1".into());
        }
        if self.top_candidates < MIN_TOP_CANDIDATES_FOR_CONFIDENCE {
            return bad(format!(
                "top_candidates must be at least {MIN_TOP_CANDIDATES_FOR_CONFIDENCE}, got {}",
                self.top_candidates
            ));
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.temperatures.is_empty() {
            return bad("temperature grid is empty".into());
        }
        for t in self.temperatures.iter().chain([&self.cqp_temperature]) {
            if !(0.0..=2.0).contains(t) {
                return bad(format!("temperature {t} outside [0, 2]"));
            }
        }
        if self.answer_max_tokens == 0 || self.cqp_max_tokens == 0 {
            return bad("max token limits must be at least 1".into());
        }
        for v in std::iter::once(&self.variant).chain(self.ablation_variants.iter().flatten()) {
            v.template_name()?;
        }
        if matches!(self.backend, BackendConfig::Replay { .. }) && self.cache.is_none() {
            return bad("replay backend needs a cache file".into());
        }
        Ok(())
    }
}
