//! Append-only completion cache with record and replay modes.
//!
//! File format: one JSON object per line, `{key, request, completion, timestamp}`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, Completion, CompletionRequest};
use crate::error::{Error, Result};

/// Hash of everything that determines a completion.
pub fn cache_key(backend_id: &str, model: &str, req: &CompletionRequest) -> String {
    #[derive(Serialize)]
    struct KeyFields<'a> {
        backend_id: &'a str,
        model: &'a str,
        prompt: &'a str,
        temperature: f64,
        max_tokens: u32,
        top_candidates: u32,
        sample_index: u32,
    }
    let fields = KeyFields {
        backend_id,
        model,
        prompt: &req.prompt,
        temperature: req.temperature,
        max_tokens: req.max_tokens,
        top_candidates: req.top_candidates,
        sample_index: req.sample_index,
    };
    let bytes = serde_json::to_vec(&fields).expect("key fields serialize");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    request: CompletionRequest,
    completion: Completion,
    timestamp: String,
}

pub struct CompletionCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, Completion>>,
    writer: Mutex<Option<File>>,
}

impl CompletionCache {
    pub fn in_memory() -> Self {
        CompletionCache { path: None, entries: Mutex::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Opens (creating if needed) a cache file. Unreadable lines are skipped
    /// with a warning.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(path.display(), e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path.display(), e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(r) => {
                        entries.entry(r.key).or_insert(r.completion);
                    }
                    Err(e) => log::warn!("{}:{}: skipping corrupt cache record: {e}", path.display(), i + 1),
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
        }
        Ok(CompletionCache { path: Some(path), entries: Mutex::new(entries), writer: Mutex::new(None) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, key: &str) -> Option<Completion> {
        self.entries.lock().unwrap().get(key).cloned().map(|mut c| {
            c.cached = true;
            c
        })
    }

    /// Stores `completion` unless the key is already present, and returns the
    /// entry that is now canonical for `key`.
    pub fn store(&self, key: &str, request: &CompletionRequest, completion: Completion) -> Result<Completion> {
        let mut entries = self.entries.lock().unwrap();
        if let Some(existing) = entries.get(key) {
            return Ok(existing.clone());
        }
        let mut completion = completion;
        completion.cached = false;
        if let Some(path) = &self.path {
            let record = CacheRecord {
                key: key.to_string(),
                request: request.clone(),
                completion: completion.clone(),
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            };
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            let mut writer = self.writer.lock().unwrap();
            if writer.is_none() {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path.display(), e))?;
                *writer = Some(f);
            }
            let f = writer.as_mut().expect("writer opened");
            f.write_all(line.as_bytes()).map_err(|e| Error::io(path.display(), e))?;
            f.flush().map_err(|e| Error::io(path.display(), e))?;
        }
        entries.insert(key.to_string(), completion.clone());
        Ok(completion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Serve hits from the cache, forward misses and record them.
    Record,
    /// Serve only from the cache. Misses are errors; the inner backend is never called.
    Replay,
}

/// Wraps a backend with a [`CompletionCache`].
pub struct CachedBackend {
    inner: Option<Arc<dyn Backend>>,
    id: String,
    model: String,
    cache: Arc<CompletionCache>,
    mode: CacheMode,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CachedBackend {
    pub fn new(inner: Arc<dyn Backend>, cache: Arc<CompletionCache>, mode: CacheMode) -> Self {
        CachedBackend {
            id: inner.id().to_string(),
            model: inner.model().to_string(),
            inner: Some(inner),
            cache,
            mode,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Replay without any inner backend, under the recorded backend identity.
    pub fn replay_only(backend_id: impl Into<String>, model: impl Into<String>, cache: Arc<CompletionCache>) -> Self {
        CachedBackend {
            inner: None,
            id: backend_id.into(),
            model: model.into(),
            cache,
            mode: CacheMode::Replay,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn cache(&self) -> &CompletionCache {
        &self.cache
    }
}

impl Backend for CachedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Completion> {
        let key = cache_key(&self.id, &self.model, req);
        if let Some(c) = self.cache.lookup(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(c);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let inner = match (self.mode, &self.inner) {
            (CacheMode::Record, Some(inner)) => inner,
            _ => return Err(Error::ReplayMiss(key)),
        };
        let fresh = inner.complete(req)?;
        self.cache.store(&key, req, fresh)
    }
}
