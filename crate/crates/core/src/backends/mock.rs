//! Offline backends for tests, examples and dry runs.

use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, Completion, CompletionRequest, TokenDistribution, TokenScore};
use crate::error::{Error, Result};
use crate::prompting::LIKERT6;

fn is_answer_prompt(prompt: &str) -> bool {
    prompt.ends_with("Answer: ")
}

/// One scripted question. Answer prompts are matched by stem prefix,
/// confidence-querying prompts by stem containment (longest stem wins).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub stem: String,
    pub answer: String,
    /// Scores at the answer position. Empty means the backend exposes none.
    #[serde(default)]
    pub tokens: Vec<TokenScore>,
    /// Certainty replies, indexed by `sample_index` modulo length.
    #[serde(default)]
    pub certainty: Vec<String>,
}

pub struct ScriptedBackend {
    id: String,
    entries: Vec<ScriptEntry>,
    default_certainty: Option<String>,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>) -> Self {
        ScriptedBackend { id: id.into(), entries: Vec::new(), default_certainty: None }
    }

    pub fn from_entries(id: impl Into<String>, entries: Vec<ScriptEntry>) -> Self {
        ScriptedBackend { entries, ..Self::new(id) }
    }

    /// Reads a script file with one [`ScriptEntry`] per line.
    pub fn from_file(id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: ScriptEntry = serde_json::from_str(line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(e);
        }
        Ok(Self::from_entries(id, entries))
    }

    pub fn push(&mut self, entry: ScriptEntry) {
        self.entries.push(entry);
    }

    /// Convenience for the common single-reply case.
    pub fn script(
        mut self,
        stem: impl Into<String>,
        answer: impl Into<String>,
        tokens: Vec<TokenScore>,
        certainty: impl Into<String>,
    ) -> Self {
        self.entries.push(ScriptEntry {
            stem: stem.into(),
            answer: answer.into(),
            tokens,
            certainty: vec![certainty.into()],
        });
        self
    }

    /// Reply used for confidence prompts whose entry has no certainty lines.
    pub fn with_default_certainty(mut self, reply: impl Into<String>) -> Self {
        self.default_certainty = Some(reply.into());
        self
    }

    fn find(&self, prompt: &str, answer_stage: bool) -> Option<&ScriptEntry> {
        self.entries
            .iter()
            .filter(|e| {
                if answer_stage {
                    prompt.starts_with(&format!("{}\n", e.stem))
                } else {
                    prompt.contains(&e.stem)
                }
            })
            .max_by_key(|e| e.stem.len())
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Completion> {
        req.validate()?;
        let answer_stage = is_answer_prompt(&req.prompt);
        let entry = self.find(&req.prompt, answer_stage);
        let (text, dist) = if answer_stage {
            let entry = entry.ok_or_else(|| Error::Validation("no scripted entry for answer prompt".into()))?;
            if entry.tokens.is_empty() {
                return Err(Error::NonIntrospectableBackend(self.id.clone()));
            }
            (entry.answer.clone(), TokenDistribution::new(entry.tokens.clone()).normalize()?)
        } else {
            let reply = entry
                .filter(|e| !e.certainty.is_empty())
                .map(|e| e.certainty[req.sample_index as usize % e.certainty.len()].clone())
                .or_else(|| self.default_certainty.clone())
                .ok_or_else(|| Error::Validation("no scripted certainty reply".into()))?;
            let first = reply.split_whitespace().next().unwrap_or("").to_string();
            (reply, TokenDistribution::new(vec![TokenScore::prob(first, 1.0)]))
        };
        Ok(Completion { text, answer_position_distribution: dist, backend_id: self.id.clone(), cached: false })
    }
}

/// Seeded stochastic mock whose certainty noise grows linearly with temperature.
///
/// Answers: picks an option by hashing the prompt and reports random
/// log-probabilities over the option letters.
///
/// Numerical confidence prompts: replies `base + s * round(amplitude * T)`
/// where `base` is fixed per prompt in `[21, 79]` and `s` is an independent
/// fair sign per sample. At `T = 0` every sample is identical. With the
/// default amplitude of 20 and `T <= 1` every reply stays within 1-100.
///
/// Likert confidence prompts: a per-prompt base category, moved one level up
/// or down with probability `T / 2` each (capped at 1/2), clamped to the scale.
pub struct NoisyMockBackend {
    id: String,
    seed: u64,
    /// Noise in points of the 1-100 scale per unit of temperature.
    pub amplitude: f64,
}

impl NoisyMockBackend {
    pub fn new(seed: u64) -> Self {
        NoisyMockBackend { id: "mock:noisy".into(), seed, amplitude: 20.0 }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    fn rng(&self, parts: &[&[u8]]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn answer(&self, prompt: &str) -> Result<(String, TokenDistribution)> {
        static OPTION_LINE: OnceLock<Regex> = OnceLock::new();
        let re = OPTION_LINE.get_or_init(|| Regex::new(r"(?m)^([A-H])\. (.+)$").expect("static regex"));
        let options: Vec<(String, String)> = re
            .captures_iter(prompt)
            .map(|c| (c[1].to_string(), c[2].to_string()))
            .collect();
        if options.is_empty() {
            return Err(Error::Validation("answer prompt lists no options".into()));
        }
        let mut rng = self.rng(&[b"answer", prompt.as_bytes()]);
        let chosen = rng.gen_range(0..options.len());
        let top: f64 = rng.gen_range(0.3..0.999);
        let weights: Vec<f64> = (0..options.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
        let rest: f64 = weights.iter().enumerate().filter(|(i, _)| *i != chosen).map(|(_, w)| w).sum();
        let entries = options
            .iter()
            .enumerate()
            .map(|(i, (label, _))| {
                let p = if i == chosen {
                    top
                } else if rest > 0.0 {
                    (1.0 - top) * weights[i] / rest
                } else {
                    0.0
                };
                TokenScore::logprob(label.clone(), p.ln())
            })
            .collect();
        let (label, text) = &options[chosen];
        Ok((format!("{label}. {text}"), TokenDistribution::new(entries).normalize()?))
    }

    fn certainty(&self, req: &CompletionRequest) -> String {
        let base_rng = &mut self.rng(&[b"base", req.prompt.as_bytes()]);
        let mut rng = self.rng(&[
            b"sample",
            req.prompt.as_bytes(),
            &req.sample_index.to_le_bytes(),
            &req.temperature.to_bits().to_le_bytes(),
        ]);
        if req.prompt.contains("On a scale of 1 to 100") {
            let base: i64 = base_rng.gen_range(21..=79);
            let step = (self.amplitude * req.temperature).round() as i64;
            let sign = if rng.gen_bool(0.5) { 1 } else { -1 };
            format!("{}", base + sign * step)
        } else {
            let n = LIKERT6.categories.len() as i64;
            let base = base_rng.gen_range(0..n);
            let p = (req.temperature / 2.0).min(0.5);
            let u: f64 = rng.gen();
            let shift = if u < p {
                -1
            } else if u < 2.0 * p {
                1
            } else {
                0
            };
            let c = &LIKERT6.categories[(base + shift).clamp(0, n - 1) as usize];
            format!("{}. {}", c.key, c.display)
        }
    }
}

impl Backend for NoisyMockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        "noisy"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Completion> {
        req.validate()?;
        let (text, dist) = if is_answer_prompt(&req.prompt) {
            self.answer(&req.prompt)?
        } else {
            let reply = self.certainty(req);
            let first = reply.split_whitespace().next().unwrap_or("").to_string();
            (reply, TokenDistribution::new(vec![TokenScore::prob(first, 1.0)]))
        };
        Ok(Completion { text, answer_position_distribution: dist, backend_id: self.id.clone(), cached: false })
    }
}
