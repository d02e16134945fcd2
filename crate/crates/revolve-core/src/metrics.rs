//! String-based exact-match metrics and rates.
//!
//! Numeric matching takes the final numerical value of the completion: the
//! segment after the last "answer" marker is preferred, falling back to the
//! whole text, and in either case the last number token wins (so the result
//! coincides with a plain last-token scan whenever any number follows the
//! marker). Comparison is exact after normalization: commas stripped, signs
//! and leading/trailing zeros normalized, so 72 == 72.0 and 1,000 == 1000.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricKind {
    ExactMatchNumeric,
    ExactMatchLetter,
    Completion,
}

/// Outcome of scoring one example. `value` is 0 or 1 for the per-example
/// kinds; `extracted` records what the extractor found, possibly empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricResult {
    pub value: f64,
    pub kind: MetricKind,
    pub extracted: String,
}

fn number_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[+-]?\d[\d,]*(?:\.\d+)?").unwrap())
}

fn answer_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s*:").unwrap())
}

fn letter_anchor_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Case-insensitive on the word "answer", optional punctuation around
    // the letter; the letter itself must be a capital A-D.
    RE.get_or_init(|| Regex::new(r#"(?i:answer)\s*:\s*[\("'\[\*]*([A-D])"#).unwrap())
}

fn standalone_letter_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-D])\b").unwrap())
}

/// Last number token of `text`, commas retained as found.
fn last_number_token(text: &str) -> Option<String> {
    number_token_re().find_iter(text).last().map(|m| m.as_str().to_string())
}

/// Final numerical value of a completion: last number token after the last
/// "answer:" marker when one exists there, otherwise the last number token
/// of the whole text.
pub fn extract_final_number(text: &str) -> Option<String> {
    if let Some(m) = answer_marker_re().find_iter(text).last() {
        if let Some(tok) = last_number_token(&text[m.end()..]) {
            return Some(tok);
        }
    }
    last_number_token(text)
}

/// Normalized decimal: (negative, integer digits, fraction digits) with
/// leading/trailing zeros stripped and -0 collapsed to 0.
fn parse_decimal(token: &str) -> Option<(bool, String, String)> {
    let cleaned: String = token.chars().filter(|c| *c != ',').collect();
    let (negative, digits) = match cleaned.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, cleaned.strip_prefix('+').unwrap_or(&cleaned)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let int_norm = int_part.trim_start_matches('0');
    let frac_norm = frac_part.trim_end_matches('0');
    let int_norm = if int_norm.is_empty() { "0" } else { int_norm };
    let negative = negative && !(int_norm == "0" && frac_norm.is_empty());
    Some((negative, int_norm.to_string(), frac_norm.to_string()))
}

/// Exact numeric equality after normalization.
pub fn numbers_equal(a: &str, b: &str) -> bool {
    match (parse_decimal(a), parse_decimal(b)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

/// Exact match on the final numerical value. The truth must parse as a
/// number; a prediction without any number scores 0 with empty extraction.
pub fn exact_match_numeric(prediction: &str, truth: &str) -> Result<MetricResult> {
    if parse_decimal(truth).is_none() {
        return Err(Error::validation(format!("truth '{truth}' does not parse as a number")));
    }
    let extracted = extract_final_number(prediction).unwrap_or_default();
    let value = if !extracted.is_empty() && numbers_equal(&extracted, truth) { 1.0 } else { 0.0 };
    Ok(MetricResult { value, kind: MetricKind::ExactMatchNumeric, extracted })
}

/// Letter extracted from a completion: last "Answer: X" occurrence, falling
/// back to the last standalone capital A-D token.
pub fn extract_final_letter(prediction: &str) -> Option<char> {
    if let Some(caps) = letter_anchor_re().captures_iter(prediction).last() {
        return caps.get(1).and_then(|m| m.as_str().chars().next());
    }
    standalone_letter_re()
        .captures_iter(prediction)
        .last()
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().chars().next())
}

/// Exact match on a multiple-choice letter. Truth must be one of A-D; an
/// extraction miss scores 0.
pub fn exact_match_letter(prediction: &str, truth: char) -> Result<MetricResult> {
    if !('A'..='D').contains(&truth) {
        return Err(Error::validation(format!("truth '{truth}' is not one of ABCD")));
    }
    match extract_final_letter(prediction) {
        Some(letter) => Ok(MetricResult {
            value: if letter == truth { 1.0 } else { 0.0 },
            kind: MetricKind::ExactMatchLetter,
            extracted: letter.to_string(),
        }),
        None => Ok(MetricResult {
            value: 0.0,
            kind: MetricKind::ExactMatchLetter,
            extracted: String::new(),
        }),
    }
}

/// Fraction of problems whose full test suite passes.
pub fn completion_rate(passed: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::validation("completion rate over zero problems"));
    }
    if passed > total {
        return Err(Error::validation(format!("passed {passed} exceeds total {total}")));
    }
    Ok(passed as f64 / total as f64)
}

/// Mean of the metric values. Empty input is a validation error.
pub fn accuracy(results: &[MetricResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::validation("accuracy over an empty result list"));
    }
    Ok(results.iter().map(|r| r.value).sum::<f64>() / results.len() as f64)
}
