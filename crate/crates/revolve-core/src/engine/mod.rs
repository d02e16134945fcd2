//! Engine abstraction over chat-style LLM backends.
//!
//! Everything that talks to a model goes through [`Engine::generate`] with a
//! single system+user pair. Three backends ship: a live OpenAI-compatible
//! HTTP client, a deterministic scripted backend for tests, and cache
//! wrappers (write-through and cache-only) over an on-disk response store.

mod cache;
mod http;
mod scripted;

pub use cache::{CacheOnlyEngine, CachingEngine, DiskCache};
pub use http::{HttpEngine, HttpEngineConfig, RetryPolicy};
pub use scripted::{Matcher, ScriptEntry, ScriptedEngine};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Sampling configuration sent with every request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default = "defaults::top_p")]
    pub top_p: f64,
    #[serde(default = "defaults::max_new_tokens")]
    pub max_new_tokens: u32,
}

mod defaults {
    pub fn temperature() -> f64 {
        0.0
    }
    pub fn top_p() -> f64 {
        0.99
    }
    pub fn max_new_tokens() -> u32 {
        2000
    }
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { temperature: 0.0, top_p: 0.99, max_new_tokens: 2000 }
    }
}

/// One chat-style call: system text, user text, sampling parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineRequest {
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    pub params: SamplingParams,
}

impl EngineRequest {
    pub fn validate(&self) -> Result<()> {
        if self.user_text.is_empty() {
            return Err(Error::validation("engine request with empty user_text"));
        }
        Ok(())
    }
}

/// A completion. `text` may be empty only if the backend returned empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineResponse {
    pub text: String,
    pub cached: bool,
    pub latency_ms: u64,
}

/// A chat backend. Implementations must be safe for concurrent `generate`
/// calls; evaluation loops may fan requests out across threads.
pub trait Engine: Send + Sync {
    fn model_id(&self) -> &str;
    fn generate(&self, request: &EngineRequest) -> Result<EngineResponse>;
}

impl Engine for Box<dyn Engine> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn generate(&self, request: &EngineRequest) -> Result<EngineResponse> {
        (**self).generate(request)
    }
}

/// Content digest of a request, used as the cache key and as the prompt
/// digest in run logs. Computed over a canonical field order, so logically
/// equal requests always collide.
pub fn cache_key(request: &EngineRequest) -> String {
    let mut hasher = Sha256::new();
    for part in [
        "model_id",
        request.model_id.as_str(),
        "system_text",
        request.system_text.as_str(),
        "user_text",
        request.user_text.as_str(),
    ] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let params = format!(
        "temperature={};top_p={};max_new_tokens={}",
        request.params.temperature, request.params.top_p, request.params.max_new_tokens
    );
    hasher.update((params.len() as u64).to_le_bytes());
    hasher.update(params.as_bytes());
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(system: &str, user: &str, temperature: f64) -> EngineRequest {
        EngineRequest {
            model_id: "m".into(),
            system_text: system.into(),
            user_text: user.into(),
            params: SamplingParams { temperature, ..SamplingParams::default() },
        }
    }

    #[test]
    fn defaults_match_protocol() {
        let p = SamplingParams::default();
        assert_eq!(p.temperature, 0.0);
        assert_eq!(p.top_p, 0.99);
        assert_eq!(p.max_new_tokens, 2000);
    }

    #[test]
    fn cache_key_is_stable() {
        assert_eq!(cache_key(&req("s", "u", 0.0)), cache_key(&req("s", "u", 0.0)));
    }

    #[test]
    fn cache_key_sensitive_to_temperature() {
        assert_ne!(cache_key(&req("s", "u", 0.0)), cache_key(&req("s", "u", 0.7)));
    }

    #[test]
    fn cache_key_sensitive_to_whitespace() {
        assert_ne!(cache_key(&req("s", "a b", 0.0)), cache_key(&req("s", "a  b", 0.0)));
    }

    #[test]
    fn cache_key_fields_do_not_bleed() {
        // Moving bytes across the system/user boundary must change the key.
        assert_ne!(cache_key(&req("ab", "c", 0.0)), cache_key(&req("a", "bc", 0.0)));
    }

    #[test]
    fn empty_user_text_rejected() {
        assert!(req("s", "", 0.0).validate().is_err());
    }
}
