//! On-disk response cache keyed by request digest.
//!
//! The cache is a flat directory: `<digest>.txt` holds the raw response
//! text, `<digest>.json` a sidecar with the request metadata, so entries
//! stay inspectable and diff-able. Writes are write-once: the first writer
//! wins and concurrent identical writes are benign.

use std::fs;
use std::path::{Path, PathBuf};

use super::{cache_key, Engine, EngineRequest, EngineResponse};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    /// Open without creating; used by replay, where a missing cache is a
    /// cold-cache environment error.
    pub fn open_existing(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::Environment(format!("cache directory {dir:?} does not exist")));
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn text_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        fs::read_to_string(self.text_path(key)).ok()
    }

    pub fn put(&self, key: &str, request: &EngineRequest, text: &str) -> Result<()> {
        let path = self.text_path(key);
        if path.exists() {
            return Ok(());
        }
        let tmp = self.dir.join(format!("{key}.txt.tmp"));
        fs::write(&tmp, text)?;
        // rename is atomic; a concurrent writer produced identical bytes.
        fs::rename(&tmp, &path)?;
        let sidecar = self.dir.join(format!("{key}.json"));
        if !sidecar.exists() {
            fs::write(&sidecar, serde_json::to_string_pretty(request)?)?;
        }
        Ok(())
    }
}

/// Write-through cache wrapper: consult the cache before the inner backend.
pub struct CachingEngine {
    inner: Box<dyn Engine>,
    cache: DiskCache,
}

impl CachingEngine {
    pub fn new(inner: Box<dyn Engine>, cache: DiskCache) -> Self {
        Self { inner, cache }
    }
}

impl Engine for CachingEngine {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, request: &EngineRequest) -> Result<EngineResponse> {
        request.validate()?;
        let key = cache_key(request);
        if let Some(text) = self.cache.get(&key) {
            return Ok(EngineResponse { text, cached: true, latency_ms: 0 });
        }
        let response = self.inner.generate(request)?;
        self.cache.put(&key, request, &response.text)?;
        Ok(response)
    }
}

/// Cache-only backend: serves exclusively from a warm cache and never calls
/// anything. A miss is a cold-cache environment error; replay uses this to
/// guarantee zero network traffic.
pub struct CacheOnlyEngine {
    model_id: String,
    cache: DiskCache,
}

impl CacheOnlyEngine {
    pub fn new(model_id: impl Into<String>, cache: DiskCache) -> Self {
        Self { model_id: model_id.into(), cache }
    }
}

impl Engine for CacheOnlyEngine {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, request: &EngineRequest) -> Result<EngineResponse> {
        request.validate()?;
        let key = cache_key(request);
        match self.cache.get(&key) {
            Some(text) => Ok(EngineResponse { text, cached: true, latency_ms: 0 }),
            None => Err(Error::Environment(format!("cold cache: no entry for digest {key}"))),
        }
    }
}
