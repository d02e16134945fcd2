//! Deterministic scripted backend, the oracle for all offline tests.
//!
//! A script is an ordered list of entries; the first non-exhausted entry
//! whose matcher hits the request wins. Exhausted entries (max_uses spent)
//! fall through to later ones. No match is an error: a script miss is a
//! test-failure signal, not something to paper over.

use std::sync::Mutex;

use regex::Regex;
use serde::Deserialize;

use super::{Engine, EngineRequest, EngineResponse};
use crate::error::{Error, Result};

/// Matches against the concatenation of system text and user text.
#[derive(Debug, Clone)]
pub enum Matcher {
    Substring(String),
    Pattern(Regex),
}

impl Matcher {
    pub fn substring(s: impl Into<String>) -> Self {
        Matcher::Substring(s.into())
    }

    pub fn pattern(re: &str) -> Result<Self> {
        Ok(Matcher::Pattern(
            Regex::new(re).map_err(|e| Error::Config(format!("bad script regex '{re}': {e}")))?,
        ))
    }

    fn hits(&self, haystack: &str) -> bool {
        match self {
            Matcher::Substring(s) => haystack.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(haystack),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptEntry {
    pub matcher: Matcher,
    pub response: String,
    pub max_uses: Option<u32>,
}

impl ScriptEntry {
    pub fn new(matcher: Matcher, response: impl Into<String>) -> Self {
        Self { matcher, response: response.into(), max_uses: None }
    }

    pub fn once(matcher: Matcher, response: impl Into<String>) -> Self {
        Self { matcher, response: response.into(), max_uses: Some(1) }
    }
}

/// Serialized form of a script entry (JSON script files).
#[derive(Debug, Deserialize)]
struct RawEntry {
    #[serde(rename = "match")]
    matcher: RawMatcher,
    response: String,
    #[serde(default)]
    max_uses: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawMatcher {
    Short(String),
    Tagged { substring: Option<String>, regex: Option<String> },
}

struct EntryState {
    entry: ScriptEntry,
    used: u32,
}

/// Scripted engine. Never touches the network; interior mutability tracks
/// per-entry use counts and a request log for assertions.
pub struct ScriptedEngine {
    model_id: String,
    entries: Mutex<Vec<EntryState>>,
    log: Mutex<Vec<EngineRequest>>,
}

impl ScriptedEngine {
    pub fn new(model_id: impl Into<String>, entries: Vec<ScriptEntry>) -> Self {
        Self {
            model_id: model_id.into(),
            entries: Mutex::new(entries.into_iter().map(|entry| EntryState { entry, used: 0 }).collect()),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Parse a JSON script: an array of `{"match": ..., "response": ..., "max_uses"?: n}`
    /// where `match` is either a bare substring or `{"substring": ...}` /
    /// `{"regex": ...}`.
    pub fn from_json(model_id: impl Into<String>, json: &str) -> Result<Self> {
        let raw: Vec<RawEntry> =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("bad script file: {e}")))?;
        let mut entries = Vec::with_capacity(raw.len());
        for r in raw {
            let matcher = match r.matcher {
                RawMatcher::Short(s) => Matcher::substring(s),
                RawMatcher::Tagged { substring: Some(s), regex: None } => Matcher::substring(s),
                RawMatcher::Tagged { substring: None, regex: Some(re) } => Matcher::pattern(&re)?,
                _ => {
                    return Err(Error::Config(
                        "script entry needs exactly one of 'substring' or 'regex'".into(),
                    ))
                }
            };
            entries.push(ScriptEntry { matcher, response: r.response, max_uses: r.max_uses });
        }
        Ok(Self::new(model_id, entries))
    }

    /// Requests seen so far, in invocation order.
    pub fn requests(&self) -> Vec<EngineRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl Engine for ScriptedEngine {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, request: &EngineRequest) -> Result<EngineResponse> {
        request.validate()?;
        self.log.lock().unwrap().push(request.clone());
        let haystack = format!("{}\n{}", request.system_text, request.user_text);
        let mut entries = self.entries.lock().unwrap();
        for state in entries.iter_mut() {
            if let Some(max) = state.entry.max_uses {
                if state.used >= max {
                    continue;
                }
            }
            if state.entry.matcher.hits(&haystack) {
                state.used += 1;
                return Ok(EngineResponse {
                    text: state.entry.response.clone(),
                    cached: false,
                    latency_ms: 0,
                });
            }
        }
        let head: String = haystack.chars().take(160).collect();
        Err(Error::ScriptMiss(format!("no entry matches request starting with: {head:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SamplingParams;

    fn req(user: &str) -> EngineRequest {
        EngineRequest {
            model_id: "scripted".into(),
            system_text: "sys".into(),
            user_text: user.into(),
            params: SamplingParams::default(),
        }
    }

    #[test]
    fn first_match_wins() {
        let engine = ScriptedEngine::new(
            "scripted",
            vec![
                ScriptEntry::new(Matcher::substring("CONVERSATION"), "The response is too vague."),
                ScriptEntry::new(Matcher::substring(""), "fallback"),
            ],
        );
        let r = engine.generate(&req("here is a <CONVERSATION> block")).unwrap();
        assert_eq!(r.text, "The response is too vague.");
        let r = engine.generate(&req("something else")).unwrap();
        assert_eq!(r.text, "fallback");
    }

    #[test]
    fn max_uses_falls_through() {
        let engine = ScriptedEngine::new(
            "scripted",
            vec![
                ScriptEntry::once(Matcher::substring("go"), "first"),
                ScriptEntry::once(Matcher::substring("go"), "second"),
            ],
        );
        assert_eq!(engine.generate(&req("go")).unwrap().text, "first");
        assert_eq!(engine.generate(&req("go")).unwrap().text, "second");
        // Both exhausted: total responses bounded by the sum of max_uses.
        assert!(matches!(engine.generate(&req("go")), Err(Error::ScriptMiss(_))));
    }

    #[test]
    fn miss_is_an_error() {
        let engine =
            ScriptedEngine::new("scripted", vec![ScriptEntry::new(Matcher::substring("x"), "y")]);
        assert!(matches!(engine.generate(&req("zzz")), Err(Error::ScriptMiss(_))));
    }

    #[test]
    fn regex_matcher_spans_system_and_user() {
        let engine = ScriptedEngine::new(
            "scripted",
            vec![ScriptEntry::new(Matcher::pattern("(?s)sys.*needle").unwrap(), "hit")],
        );
        assert_eq!(engine.generate(&req("has needle inside")).unwrap().text, "hit");
    }

    #[test]
    fn json_script_parses() {
        let json = r#"[
            {"match": "plain", "response": "a"},
            {"match": {"regex": "(?s)x.*y"}, "response": "b", "max_uses": 2},
            {"match": {"substring": "z"}, "response": "c"}
        ]"#;
        let engine = ScriptedEngine::from_json("m", json).unwrap();
        assert_eq!(engine.generate(&req("plain text")).unwrap().text, "a");
        assert_eq!(engine.generate(&req("x then y")).unwrap().text, "b");
        assert_eq!(engine.generate(&req("zebra")).unwrap().text, "c");
    }

    #[test]
    fn request_log_preserves_order() {
        let engine =
            ScriptedEngine::new("scripted", vec![ScriptEntry::new(Matcher::substring(""), "ok")]);
        engine.generate(&req("one")).unwrap();
        engine.generate(&req("two")).unwrap();
        let log = engine.requests();
        assert_eq!(log.len(), 2);
        assert_eq!(log[0].user_text, "one");
        assert_eq!(log[1].user_text, "two");
    }
}
