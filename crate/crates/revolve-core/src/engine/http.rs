//! Live backend speaking the OpenAI-compatible chat-completions protocol.
//!
//! POSTs to `<base_url>/chat/completions` (the suffix is appended unless the
//! configured URL already ends with it) with a bearer token taken from
//! `REVOLVE_API_KEY`. Transient failures (transport errors, 429, 5xx) are
//! retried with exponential backoff; other statuses fail immediately.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Engine, EngineRequest, EngineResponse};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "REVOLVE_API_KEY";
pub const BASE_URL_ENV: &str = "REVOLVE_BASE_URL";

/// 3 attempts with 1s/2s/4s backoff unless configured otherwise.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

#[derive(Debug, Clone)]
pub struct HttpEngineConfig {
    pub model_id: String,
    pub base_url: String,
    pub api_key: String,
    pub retry: RetryPolicy,
    /// Substituted for temperature 0; Llama-family endpoints reject a hard
    /// zero, so model ids containing "llama" default to 1e-6.
    pub temperature_floor: Option<f64>,
    pub timeout: Duration,
}

impl HttpEngineConfig {
    /// Base URL from the argument or `REVOLVE_BASE_URL`, key from
    /// `REVOLVE_API_KEY`.
    pub fn from_env(model_id: impl Into<String>, base_url: Option<String>) -> Result<Self> {
        let model_id = model_id.into();
        let base_url = match base_url.or_else(|| std::env::var(BASE_URL_ENV).ok()) {
            Some(u) if !u.is_empty() => u,
            _ => {
                return Err(Error::Environment(format!(
                    "no base URL: set {BASE_URL_ENV} or configure base_url"
                )))
            }
        };
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::Environment(format!("{API_KEY_ENV} is not set")))?;
        let temperature_floor =
            if model_id.to_lowercase().contains("llama") { Some(1e-6) } else { None };
        Ok(Self {
            model_id,
            base_url,
            api_key,
            retry: RetryPolicy::default(),
            temperature_floor,
            timeout: Duration::from_secs(120),
        })
    }

    pub fn endpoint(&self) -> String {
        let trimmed = self.base_url.trim_end_matches('/');
        if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        }
    }
}

pub struct HttpEngine {
    config: HttpEngineConfig,
    client: reqwest::blocking::Client,
}

impl HttpEngine {
    pub fn new(config: HttpEngineConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Environment(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { config, client })
    }

    /// Request body for one call. The system message is included only when
    /// non-empty; the temperature floor replaces an exact 0.
    pub fn request_body(config: &HttpEngineConfig, request: &EngineRequest) -> Value {
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_text}));
        }
        messages.push(json!({"role": "user", "content": request.user_text}));
        let temperature = match config.temperature_floor {
            Some(floor) if request.params.temperature == 0.0 => floor,
            _ => request.params.temperature,
        };
        json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": temperature,
            "top_p": request.params.top_p,
            "max_tokens": request.params.max_new_tokens,
        })
    }

    /// Text of the first choice's message content. An empty completion is
    /// recorded as-is, not retried.
    pub fn parse_response(value: &Value) -> Result<String> {
        value["choices"]
            .get(0)
            .and_then(|c| c["message"]["content"].as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| Error::Engine {
                attempts: 1,
                message: format!("response missing choices[0].message.content: {value}"),
            })
    }

    fn try_once(&self, body: &Value) -> std::result::Result<String, (bool, String)> {
        let result = self
            .client
            .post(self.config.endpoint())
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send();
        match result {
            Err(e) => Err((true, format!("transport error: {e}"))),
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    let value: Value = resp
                        .json()
                        .map_err(|e| (false, format!("invalid JSON response: {e}")))?;
                    Self::parse_response(&value).map_err(|e| (false, e.to_string()))
                } else {
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    let text = resp.text().unwrap_or_default();
                    Err((retryable, format!("status {status}: {text}")))
                }
            }
        }
    }
}

impl Engine for HttpEngine {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn generate(&self, request: &EngineRequest) -> Result<EngineResponse> {
        request.validate()?;
        let body = Self::request_body(&self.config, request);
        let start = Instant::now();
        let mut last = String::new();
        for attempt in 1..=self.config.retry.attempts {
            match self.try_once(&body) {
                Ok(text) => {
                    return Ok(EngineResponse {
                        text,
                        cached: false,
                        latency_ms: start.elapsed().as_millis() as u64,
                    })
                }
                Err((retryable, message)) => {
                    last = message;
                    if !retryable {
                        return Err(Error::Engine { attempts: attempt, message: last });
                    }
                    if attempt < self.config.retry.attempts {
                        std::thread::sleep(self.config.retry.base_delay * 2u32.pow(attempt - 1));
                    }
                }
            }
        }
        Err(Error::Engine { attempts: self.config.retry.attempts, message: last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SamplingParams;

    fn config(model: &str) -> HttpEngineConfig {
        HttpEngineConfig {
            model_id: model.into(),
            base_url: "https://api.example.com/v1".into(),
            api_key: "k".into(),
            retry: RetryPolicy::default(),
            temperature_floor: if model.contains("llama") { Some(1e-6) } else { None },
            timeout: Duration::from_secs(5),
        }
    }

    fn req(model: &str) -> EngineRequest {
        EngineRequest {
            model_id: model.into(),
            system_text: "sys".into(),
            user_text: "hello".into(),
            params: SamplingParams::default(),
        }
    }

    #[test]
    fn endpoint_appends_suffix_once() {
        let mut c = config("m");
        assert_eq!(c.endpoint(), "https://api.example.com/v1/chat/completions");
        c.base_url = "https://api.example.com/v1/chat/completions".into();
        assert_eq!(c.endpoint(), "https://api.example.com/v1/chat/completions");
    }

    #[test]
    fn body_has_protocol_fields() {
        let body = HttpEngine::request_body(&config("gpt-4o"), &req("gpt-4o"));
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"], "hello");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["top_p"], 0.99);
        assert_eq!(body["max_tokens"], 2000);
    }

    #[test]
    fn llama_floor_replaces_zero_temperature() {
        let body =
            HttpEngine::request_body(&config("llama-3.1-8b-instruct"), &req("llama-3.1-8b-instruct"));
        assert_eq!(body["temperature"], 1e-6);
        // A non-zero temperature is sent literally.
        let mut warm = req("llama-3.1-8b-instruct");
        warm.params.temperature = 0.7;
        let body = HttpEngine::request_body(&config("llama-3.1-8b-instruct"), &warm);
        assert_eq!(body["temperature"], 0.7);
    }

    #[test]
    fn empty_system_is_omitted() {
        let mut r = req("m");
        r.system_text.clear();
        let body = HttpEngine::request_body(&config("m"), &r);
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
        assert_eq!(body["messages"][0]["role"], "user");
    }

    #[test]
    fn parse_reads_first_choice() {
        let value = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "hi there"}}]
        });
        assert_eq!(HttpEngine::parse_response(&value).unwrap(), "hi there");
        let bad = serde_json::json!({"choices": []});
        assert!(HttpEngine::parse_response(&bad).is_err());
    }
}
