//! Optimizer step: consume a variable's textual gradients and produce the
//! next value via the optimizer model.
//!
//! Four flavors: TGD (first-order), momentum (TGD plus a window of past
//! feedbacks, with a surge instruction when feedback repeats), REVOLVE
//! (history-carrying prompts) and the prompt-design ablation variant. A
//! parse failure never corrupts the variable: the step degrades to a no-op
//! after the configured re-asks.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::engine::{cache_key, Engine, EngineRequest, SamplingParams};
use crate::error::Result;
use crate::graph::Variable;
use crate::prompts::{aggregate_feedback, serialize_history, PastIterations, PromptFamily};
use crate::templates::{names, TemplateRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerFlavor {
    Tgd,
    Momentum,
    Revolve,
    Variant,
}

impl OptimizerFlavor {
    pub fn prompt_family(self) -> PromptFamily {
        match self {
            OptimizerFlavor::Tgd | OptimizerFlavor::Momentum => PromptFamily::Tgd,
            OptimizerFlavor::Revolve => PromptFamily::Revolve,
            OptimizerFlavor::Variant => PromptFamily::Variant,
        }
    }
}

impl std::fmt::Display for OptimizerFlavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OptimizerFlavor::Tgd => "tgd",
            OptimizerFlavor::Momentum => "momentum",
            OptimizerFlavor::Revolve => "revolve",
            OptimizerFlavor::Variant => "variant",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub flavor: OptimizerFlavor,
    pub momentum_window: usize,
    pub max_history: Option<usize>,
    pub new_variable_tags: (String, String),
    pub parse_retries: u32,
}

impl OptimizerConfig {
    pub fn new(flavor: OptimizerFlavor) -> Self {
        Self {
            flavor,
            momentum_window: 12,
            max_history: None,
            new_variable_tags: ("<IMPROVED_VARIABLE>".into(), "</IMPROVED_VARIABLE>".into()),
            parse_retries: 1,
        }
    }
}

/// Outcome of one step. `parsed == false` means every attempt failed to
/// produce tagged output and `new_value` equals the previous value.
/// `attempts` counts engine calls actually issued (0 for the gradient-free
/// no-op).
#[derive(Debug, Clone)]
pub struct OptimizerStepResult {
    pub new_value: String,
    pub raw_completion: String,
    pub parsed: bool,
    pub attempts: u32,
    pub request_digests: Vec<String>,
}

/// Interior of the first start/end tag pair, outer whitespace trimmed.
/// Absent when either tag is missing or the end precedes the start.
pub fn parse_improved_variable(completion: &str, tags: (&str, &str)) -> Option<String> {
    let (start, end) = tags;
    let s = completion.find(start)?;
    let rest = &completion[s + start.len()..];
    let e = rest.find(end)?;
    Some(rest[..e].trim().to_string())
}

/// Numbered serialization of the last `min(window, len)` feedbacks,
/// oldest-of-window first.
pub fn momentum_context(feedback_log: &[String], window: usize) -> String {
    assert!(window >= 1, "momentum window must be at least 1");
    let start = feedback_log.len().saturating_sub(window);
    feedback_log[start..]
        .iter()
        .enumerate()
        .map(|(i, fb)| format!("Past feedback {}: {}", i + 1, fb))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn word_set(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Jaccard similarity on word sets; 1.0 when both are empty.
pub fn feedback_similarity(a: &str, b: &str) -> f64 {
    let sa = word_set(a);
    let sb = word_set(b);
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

const VARIABLE_SHORT_LIMIT: usize = 1500;
const VARIABLE_SHORT_EDGE: usize = 700;

/// Bounded rendering of the variable value: full text up to 1500 chars,
/// else head 700 + ellipsis + tail 700.
pub fn variable_short(value: &str) -> String {
    let chars: Vec<char> = value.chars().collect();
    if chars.len() <= VARIABLE_SHORT_LIMIT {
        return value.to_string();
    }
    let head: String = chars[..VARIABLE_SHORT_EDGE].iter().collect();
    let tail: String = chars[chars.len() - VARIABLE_SHORT_EDGE..].iter().collect();
    format!("{head}…{tail}")
}

/// System and user texts of one optimizer call.
pub struct OptimizerPrompt {
    pub system_text: String,
    pub user_text: String,
}

/// Build the optimizer prompt for a variable. The system text is the
/// flavor's optimizer system prompt with the glossary appended; the user
/// text is the flavor's TGD prefix, plus the momentum section for the
/// momentum flavor (with a surge instruction when the last two feedbacks
/// overlap by at least 60% of their word union).
pub fn build_optimizer_prompt(
    registry: &TemplateRegistry,
    config: &OptimizerConfig,
    variable: &Variable,
    history: &PastIterations,
    feedback_log: &[String],
) -> Result<OptimizerPrompt> {
    let glossary = registry.glossary()?;
    let family = config.flavor.prompt_family();
    let system_text = registry.render(
        family.optimizer_system_template(),
        &[
            ("new_variable_start_tag", config.new_variable_tags.0.as_str()),
            ("new_variable_end_tag", config.new_variable_tags.1.as_str()),
            ("GLOSSARY_TEXT", glossary),
        ],
    )?;

    let grad = aggregate_feedback(&variable.gradients)?;
    let short = variable_short(&variable.value);
    let mut bindings = vec![
        ("variable_desc", variable.role_description.as_str()),
        ("variable_short", short.as_str()),
        ("variable_grad", grad.as_str()),
    ];
    let serialized;
    if family.carries_history() {
        serialized = serialize_history(history);
        bindings.push(("past_values", serialized.as_str()));
    }
    let mut user_text = registry.render(family.tgd_prefix_template(), &bindings)?;

    if config.flavor == OptimizerFlavor::Momentum && !feedback_log.is_empty() {
        let context = momentum_context(feedback_log, config.momentum_window);
        let section =
            registry.render(names::MOMENTUM_SECTION, &[("past_feedbacks", context.as_str())])?;
        user_text.push_str("\n\n");
        user_text.push_str(&section);
        if feedback_log.len() >= 2 {
            let n = feedback_log.len();
            if feedback_similarity(&feedback_log[n - 1], &feedback_log[n - 2]) >= 0.6 {
                user_text.push('\n');
                user_text.push_str(&registry.render(names::MOMENTUM_SURGE, &[])?);
            }
        }
    }

    Ok(OptimizerPrompt { system_text, user_text })
}

/// One optimizer step. A variable without gradients is a no-op; otherwise
/// exactly one engine call when parsing succeeds on the first attempt, and
/// at most `1 + parse_retries` calls otherwise (each re-ask appends one
/// corrective line). After the retries are spent the step is a logged no-op.
pub fn step(
    config: &OptimizerConfig,
    engine: &dyn Engine,
    registry: &TemplateRegistry,
    variable: &Variable,
    history: &PastIterations,
    feedback_log: &[String],
    params: SamplingParams,
) -> Result<OptimizerStepResult> {
    if variable.gradients.is_empty() {
        return Ok(OptimizerStepResult {
            new_value: variable.value.clone(),
            raw_completion: String::new(),
            parsed: true,
            attempts: 0,
            request_digests: Vec::new(),
        });
    }

    let prompt = build_optimizer_prompt(registry, config, variable, history, feedback_log)?;
    let reask = registry.render(
        names::REASK,
        &[
            ("new_variable_start_tag", config.new_variable_tags.0.as_str()),
            ("new_variable_end_tag", config.new_variable_tags.1.as_str()),
        ],
    )?;

    let tags = (config.new_variable_tags.0.as_str(), config.new_variable_tags.1.as_str());
    let mut user_text = prompt.user_text;
    let mut digests = Vec::new();
    let mut raw = String::new();
    for attempt in 1..=(1 + config.parse_retries) {
        let request = EngineRequest {
            model_id: engine.model_id().to_string(),
            system_text: prompt.system_text.clone(),
            user_text: user_text.clone(),
            params,
        };
        digests.push(cache_key(&request));
        let response = engine.generate(&request)?;
        raw = response.text;
        if let Some(improved) = parse_improved_variable(&raw, tags) {
            return Ok(OptimizerStepResult {
                new_value: improved,
                raw_completion: raw,
                parsed: true,
                attempts: attempt,
                request_digests: digests,
            });
        }
        user_text.push_str("\n\n");
        user_text.push_str(&reask);
    }

    Ok(OptimizerStepResult {
        new_value: variable.value.clone(),
        raw_completion: raw,
        parsed: false,
        attempts: 1 + config.parse_retries,
        request_digests: digests,
    })
}
