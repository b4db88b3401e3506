//! Backend for servers speaking the completions wire shape with per-position
//! top alternatives (`logprobs: N`). Local servers that report raw logits
//! under `top_logits` are accepted as well.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Backend, Completion, CompletionRequest, ScoreKind, TokenDistribution, TokenScore};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "CONFALIGN_API_KEY";
pub const BASE_URL_ENV: &str = "CONFALIGN_BASE_URL";

#[derive(Debug, Clone)]
pub struct TransportResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl TransportResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// The single network operation the HTTP backend performs.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &[u8]) -> Result<TransportResponse>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Network { message: e.to_string(), retryable: false })?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &[u8]) -> Result<TransportResponse> {
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_vec());
        for (k, v) in headers {
            req = req.header(k, v);
        }
        let resp = req.send().map_err(|e| Error::Network { message: e.to_string(), retryable: true })?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .filter_map(|(k, v)| v.to_str().ok().map(|v| (k.to_string(), v.to_string())))
            .collect();
        let body = resp
            .bytes()
            .map_err(|e| Error::Network { message: e.to_string(), retryable: true })?
            .to_vec();
        Ok(TransportResponse { status, headers, body })
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    /// Upper bound for both exponential backoff and provider-indicated waits.
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let d = self.base_delay.saturating_mul(1 << attempt.min(16));
        d.min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
    /// Minimum spacing between request starts. Zero disables the limit.
    pub min_interval: Duration,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            retry: RetryPolicy::default(),
            min_interval: Duration::ZERO,
            timeout: Duration::from_secs(60),
        }
    }

    /// Reads `CONFALIGN_BASE_URL` and `CONFALIGN_API_KEY`.
    pub fn from_env(model: impl Into<String>) -> Result<Self> {
        let base = std::env::var(BASE_URL_ENV).map_err(|_| Error::Config(format!("{BASE_URL_ENV} is not set")))?;
        let mut cfg = HttpConfig::new(base, model);
        cfg.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

pub struct HttpBackend {
    id: String,
    config: HttpConfig,
    transport: Box<dyn Transport>,
    last_start: Mutex<Option<Instant>>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let transport = ReqwestTransport::new(config.timeout)?;
        Ok(Self::with_transport(config, Box::new(transport)))
    }

    pub fn with_transport(config: HttpConfig, transport: Box<dyn Transport>) -> Self {
        HttpBackend {
            id: format!("http:{}", config.base_url.trim_end_matches('/')),
            config,
            transport,
            last_start: Mutex::new(None),
        }
    }

    fn url(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn throttle(&self) {
        if self.config.min_interval.is_zero() {
            return;
        }
        let mut last = self.last_start.lock().unwrap();
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < self.config.min_interval {
                std::thread::sleep(self.config.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    pub fn request_body(&self, req: &CompletionRequest) -> Value {
        json!({
            "model": self.config.model,
            "prompt": req.prompt,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "logprobs": req.top_candidates,
            "echo": false,
        })
    }

    fn send_with_retry(&self, body: &[u8]) -> Result<TransportResponse> {
        let mut headers = Vec::new();
        if let Some(key) = &self.config.api_key {
            headers.push(("authorization".to_string(), format!("Bearer {key}")));
        }
        let policy = &self.config.retry;
        let url = self.url();
        let mut last_err = None;
        for attempt in 0..policy.max_attempts.max(1) {
            self.throttle();
            match self.transport.post_json(&url, &headers, body) {
                Ok(resp) if resp.status == 429 => {
                    let wait = resp
                        .header("retry-after")
                        .and_then(|v| v.trim().parse::<f64>().ok())
                        .filter(|s| s.is_finite() && *s >= 0.0)
                        .map(Duration::from_secs_f64)
                        .unwrap_or_else(|| policy.backoff(attempt))
                        .min(policy.max_delay);
                    log::warn!("{}: rate limited, retrying in {:?}", self.id, wait);
                    last_err = Some(Error::RateLimited { attempts: attempt + 1 });
                    std::thread::sleep(wait);
                }
                Ok(resp) if resp.status >= 500 => {
                    last_err = Some(Error::Network {
                        message: format!("server error {}", resp.status),
                        retryable: true,
                    });
                    std::thread::sleep(policy.backoff(attempt));
                }
                Ok(resp) if resp.status >= 400 => {
                    return Err(Error::Network {
                        message: format!("HTTP {}: {}", resp.status, String::from_utf8_lossy(&resp.body)),
                        retryable: false,
                    });
                }
                Ok(resp) => return Ok(resp),
                Err(e @ Error::Network { retryable: true, .. }) => {
                    log::warn!("{}: {e}, retrying", self.id);
                    last_err = Some(e);
                    std::thread::sleep(policy.backoff(attempt));
                }
                Err(e) => return Err(e),
            }
        }
        Err(match last_err {
            Some(Error::RateLimited { .. }) => Error::RateLimited { attempts: policy.max_attempts.max(1) },
            Some(e) => e,
            None => Error::Network { message: "no attempts made".into(), retryable: true },
        })
    }
}

#[derive(Deserialize)]
struct CompletionsResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Deserialize)]
struct Logprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Option<Vec<Option<serde_json::Map<String, Value>>>>,
    #[serde(default)]
    top_logits: Option<Vec<Option<serde_json::Map<String, Value>>>>,
}

/// Extracts text and the first-position distribution from a completions body.
pub(crate) fn parse_completions_body(backend_id: &str, body: &[u8]) -> Result<(String, TokenDistribution)> {
    let resp: CompletionsResponse = serde_json::from_slice(body)?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| Error::Network { message: "response has no choices".into(), retryable: false })?;
    let no_scores = || Error::NonIntrospectableBackend(backend_id.to_string());
    let lp = choice.logprobs.ok_or_else(no_scores)?;

    let (tops, kind) = match (lp.top_logprobs, lp.top_logits) {
        (Some(t), _) if !t.is_empty() => (t, ScoreKind::Logprob),
        (_, Some(t)) if !t.is_empty() => (t, ScoreKind::Logit),
        _ => return Err(no_scores()),
    };
    let first = tops.into_iter().next().flatten().ok_or_else(no_scores)?;
    let mut entries: Vec<TokenScore> = first
        .into_iter()
        .filter_map(|(tok, v)| v.as_f64().map(|s| TokenScore { token: tok, score: s, kind }))
        .collect();
    if kind == ScoreKind::Logprob {
        // The sampled token is not always among the listed alternatives.
        if let (Some(tok), Some(Some(s))) = (lp.tokens.first(), lp.token_logprobs.first()) {
            if !entries.iter().any(|e| &e.token == tok) {
                entries.push(TokenScore::logprob(tok.clone(), *s));
            }
        }
    }
    if entries.is_empty() {
        return Err(no_scores());
    }
    let dist = TokenDistribution { position: 0, entries }.normalize()?;
    Ok((choice.text, dist))
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Completion> {
        req.validate()?;
        let body = serde_json::to_vec(&self.request_body(req))?;
        let resp = self.send_with_retry(&body)?;
        let (text, dist) = parse_completions_body(&self.id, &resp.body)?;
        Ok(Completion {
            text,
            answer_position_distribution: dist,
            backend_id: self.id.clone(),
            cached: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Canned {
        responses: Mutex<VecDeque<Result<TransportResponse>>>,
        calls: Arc<AtomicUsize>,
        bodies: Arc<Mutex<Vec<Vec<u8>>>>,
    }

    impl Transport for Canned {
        fn post_json(&self, _url: &str, _h: &[(String, String)], body: &[u8]) -> Result<TransportResponse> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.bodies.lock().unwrap().push(body.to_vec());
            self.responses.lock().unwrap().pop_front().expect("unexpected request")
        }
    }

    fn ok(body: &str) -> Result<TransportResponse> {
        Ok(TransportResponse { status: 200, headers: vec![], body: body.as_bytes().to_vec() })
    }

    fn status(code: u16, headers: &[(&str, &str)]) -> Result<TransportResponse> {
        Ok(TransportResponse {
            status: code,
            headers: headers.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            body: vec![],
        })
    }

    type Bodies = Arc<Mutex<Vec<Vec<u8>>>>;

    fn backend(responses: Vec<Result<TransportResponse>>) -> (HttpBackend, Arc<AtomicUsize>, Bodies) {
        let calls = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let mut cfg = HttpConfig::new("http://test/v1/", "m");
        cfg.retry = RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(5),
        };
        let t = Canned { responses: Mutex::new(responses.into()), calls: calls.clone(), bodies: bodies.clone() };
        (HttpBackend::with_transport(cfg, Box::new(t)), calls, bodies)
    }

    const BODY: &str = r#"{"choices":[{"text":" E. laboratory","logprobs":{"tokens":[" E"],"token_logprobs":[-0.05],"top_logprobs":[{" E":-0.05," D":-3.2}]}}]}"#;

    #[test]
    fn parses_top_logprobs() {
        let (b, calls, bodies) = backend(vec![ok(BODY)]);
        let c = b.complete(&CompletionRequest::new("p")).unwrap();
        assert_eq!(c.text, " E. laboratory");
        assert_eq!(c.answer_position_distribution.entries.len(), 2);
        assert!(c.answer_position_distribution.is_normalized());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let sent: Value = serde_json::from_slice(&bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["logprobs"], 20);
        assert_eq!(sent["echo"], false);
        assert_eq!(sent["model"], "m");
    }

    #[test]
    fn parses_logits() {
        let body = r#"{"choices":[{"text":"A","logprobs":{"top_logits":[{"A":2.0,"B":2.0}]}}]}"#;
        let (b, _, _) = backend(vec![ok(body)]);
        let c = b.complete(&CompletionRequest::new("p")).unwrap();
        assert!(c.answer_position_distribution.entries.iter().all(|e| e.score == 0.5));
    }

    #[test]
    fn missing_scores_is_non_introspectable() {
        let (b, _, _) = backend(vec![ok(r#"{"choices":[{"text":"A"}]}"#)]);
        assert!(matches!(b.complete(&CompletionRequest::new("p")), Err(Error::NonIntrospectableBackend(_))));
    }

    #[test]
    fn rate_limit_then_success() {
        let (b, calls, _) = backend(vec![status(429, &[("Retry-After", "0")]), ok(BODY)]);
        assert!(b.complete(&CompletionRequest::new("p")).is_ok());
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn rate_limit_is_bounded() {
        let (b, calls, _) = backend(vec![status(429, &[]), status(429, &[]), status(429, &[])]);
        assert!(matches!(b.complete(&CompletionRequest::new("p")), Err(Error::RateLimited { attempts: 3 })));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn network_errors_are_retried() {
        let net = || Err(Error::Network { message: "reset".into(), retryable: true });
        let (b, calls, _) = backend(vec![net(), status(503, &[]), ok(BODY)]);
        assert!(b.complete(&CompletionRequest::new("p")).is_ok());
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let (b, _, _) = backend(vec![net(), net(), net()]);
        assert!(matches!(b.complete(&CompletionRequest::new("p")), Err(Error::Network { retryable: true, .. })));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (b, calls, _) = backend(vec![status(401, &[])]);
        assert!(matches!(b.complete(&CompletionRequest::new("p")), Err(Error::Network { retryable: false, .. })));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }
}
