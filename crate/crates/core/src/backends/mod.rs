//! Completion backends.
//!
//! Every backend produces a [`Completion`] whose answer-position distribution
//! has already been converted to plain probabilities.

mod cache;
mod http;
mod mock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{cache_key, CacheMode, CachedBackend, CompletionCache};
pub use http::{API_KEY_ENV, BASE_URL_ENV, HttpBackend, HttpConfig, ReqwestTransport, RetryPolicy, Transport, TransportResponse};
pub use mock::{NoisyMockBackend, ScriptEntry, ScriptedBackend};

pub const DEFAULT_TOP_CANDIDATES: u32 = 20;
/// Enough alternatives to cover every option label of a five-option item.
pub const MIN_TOP_CANDIDATES_FOR_CONFIDENCE: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Alternatives with scores to return per generated position.
    pub top_candidates: u32,
    /// Distinguishes repeated stochastic samples of the same prompt.
    pub sample_index: u32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 10,
            top_candidates: DEFAULT_TOP_CANDIDATES,
            sample_index: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Validation(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Validation("max_tokens must be at least 1".into()));
        }
        if self.top_candidates == 0 {
            return Err(Error::Validation("top_candidates must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Logprob,
    Logit,
    #[default]
    Prob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub score: f64,
    #[serde(default)]
    pub kind: ScoreKind,
}

impl TokenScore {
    pub fn prob(token: impl Into<String>, p: f64) -> Self {
        TokenScore { token: token.into(), score: p, kind: ScoreKind::Prob }
    }

    pub fn logprob(token: impl Into<String>, lp: f64) -> Self {
        TokenScore { token: token.into(), score: lp, kind: ScoreKind::Logprob }
    }

    pub fn logit(token: impl Into<String>, l: f64) -> Self {
        TokenScore { token: token.into(), score: l, kind: ScoreKind::Logit }
    }
}

/// Candidate tokens at one generated position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub position: u32,
    pub entries: Vec<TokenScore>,
}

impl TokenDistribution {
    pub fn new(entries: Vec<TokenScore>) -> Self {
        TokenDistribution { position: 0, entries }
    }

    pub fn is_normalized(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.kind == ScoreKind::Prob && (0.0..=1.0).contains(&e.score))
    }

    /// Converts every entry to a probability. All entries must share one kind.
    pub fn normalize(self) -> Result<Self> {
        let Some(first) = self.entries.first() else {
            return Ok(self);
        };
        let kind = first.kind;
        if self.entries.iter().any(|e| e.kind != kind) {
            return Err(Error::Validation("mixed score kinds in one distribution".into()));
        }
        let entries = match kind {
            ScoreKind::Logprob => exp_logprobs(&self.entries)?,
            ScoreKind::Logit => softmax_logits(&self.entries)?,
            ScoreKind::Prob => {
                if let Some(bad) = self.entries.iter().find(|e| !(0.0..=1.0).contains(&e.score)) {
                    return Err(Error::Validation(format!("probability {} outside [0, 1]", bad.score)));
                }
                self.entries
            }
        };
        Ok(TokenDistribution { position: self.position, entries })
    }
}

/// `p = exp(logprob)` for each entry.
pub fn exp_logprobs(entries: &[TokenScore]) -> Result<Vec<TokenScore>> {
    entries
        .iter()
        .map(|e| {
            if e.kind != ScoreKind::Logprob {
                return Err(Error::Validation(format!("expected logprob, got {:?}", e.kind)));
            }
            if e.score.is_nan() || e.score > 0.0 {
                return Err(Error::Validation(format!("logprob {} for {:?} is not <= 0", e.score, e.token)));
            }
            Ok(TokenScore::prob(e.token.clone(), e.score.exp()))
        })
        .collect()
}

/// Softmax over the returned logits, shifted by the maximum for stability.
pub fn softmax_logits(entries: &[TokenScore]) -> Result<Vec<TokenScore>> {
    if entries.is_empty() {
        return Err(Error::Validation("softmax over zero logits".into()));
    }
    for e in entries {
        if e.kind != ScoreKind::Logit {
            return Err(Error::Validation(format!("expected logit, got {:?}", e.kind)));
        }
        if !e.score.is_finite() {
            return Err(Error::Validation(format!("non-finite logit {} for {:?}", e.score, e.token)));
        }
    }
    let max = entries.iter().map(|e| e.score).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = entries.iter().map(|e| (e.score - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(entries
        .iter()
        .zip(exps)
        .map(|(e, x)| TokenScore::prob(e.token.clone(), x / sum))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Distribution at the first generated position.
    pub answer_position_distribution: TokenDistribution,
    pub backend_id: String,
    #[serde(default)]
    pub cached: bool,
}

/// A model that can complete prompts. Implementations must be shareable
/// across worker threads.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn model(&self) -> &str {
        ""
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Completion>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Completion> {
        (**self).complete(req)
    }
}
