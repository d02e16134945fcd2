//! Construction of gradient-elicitation prompts.
//!
//! This is where the two optimization behaviours actually diverge: the
//! first-order prompt carries only the conversation and its feedback, while
//! the response-evolution prompt additionally embeds the serialized
//! trajectory of past (variable, response, feedback) triples inside
//! `<PAST_ITERATIONS>` tags and asks for gradual evolution. Momentum reuses
//! the first-order gradients; the ablation variant swaps in its own
//! template family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConversationContext, TextualGradient};
use crate::templates::{names, TemplateRegistry};

/// Gradient flavour fixed per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientMode {
    Textgrad,
    Revolve,
}

/// Which template family backs the prompts. The variant family exists for
/// the prompt-design ablation; it is first-order like TGD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptFamily {
    Tgd,
    Revolve,
    Variant,
}

impl PromptFamily {
    pub fn carries_history(self) -> bool {
        matches!(self, PromptFamily::Revolve)
    }

    pub fn gradient_template(self) -> &'static str {
        match self {
            PromptFamily::Tgd => names::GRADIENT_TGD,
            PromptFamily::Revolve => names::GRADIENT_REVOLVE,
            PromptFamily::Variant => names::GRADIENT_VARIANT,
        }
    }

    pub fn optimizer_system_template(self) -> &'static str {
        match self {
            PromptFamily::Tgd => names::OPTIMIZER_SYSTEM_TGD,
            PromptFamily::Revolve => names::OPTIMIZER_SYSTEM_REVOLVE,
            PromptFamily::Variant => names::OPTIMIZER_SYSTEM_VARIANT,
        }
    }

    pub fn tgd_prefix_template(self) -> &'static str {
        match self {
            PromptFamily::Tgd => names::TGD_PREFIX_TGD,
            PromptFamily::Revolve => names::TGD_PREFIX_REVOLVE,
            PromptFamily::Variant => names::TGD_PREFIX_VARIANT,
        }
    }
}

impl From<GradientMode> for PromptFamily {
    fn from(mode: GradientMode) -> Self {
        match mode {
            GradientMode::Textgrad => PromptFamily::Tgd,
            GradientMode::Revolve => PromptFamily::Revolve,
        }
    }
}

/// One past iteration of a variable: what it was, what it produced, and the
/// feedback that produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: u32,
    pub variable_value: String,
    pub response: String,
    pub loss_text: String,
}

/// Ordered trajectory consumed as `{past_values}`. Iterations are strictly
/// increasing; an optional cap evicts the oldest entries first while the
/// surviving entries keep their original iteration indices.
#[derive(Debug, Clone, Default)]
pub struct PastIterations {
    entries: Vec<HistoryEntry>,
    cap: Option<usize>,
}

impl PastIterations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cap(cap: Option<usize>) -> Self {
        Self { entries: Vec::new(), cap }
    }

    pub fn push(&mut self, entry: HistoryEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.iteration <= last.iteration {
                return Err(Error::validation(format!(
                    "history iterations must be strictly increasing: {} after {}",
                    entry.iteration, last.iteration
                )));
            }
        }
        self.entries.push(entry);
        if let Some(cap) = self.cap {
            while self.entries.len() > cap {
                self.entries.remove(0);
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Deterministic serialization of a trajectory: one block per entry, oldest
/// first, blocks separated by a blank line. Headers keep the original
/// iteration indices even after truncation.
pub fn serialize_history(history: &PastIterations) -> String {
    history
        .entries()
        .iter()
        .map(|e| {
            format!(
                "Iteration {}:\nVariable:\n{}\nResponse:\n{}\nFeedback:\n{}",
                e.iteration, e.variable_value, e.response, e.loss_text
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Numbered concatenation of the feedback texts, list order preserved.
pub fn aggregate_feedback(gradients: &[TextualGradient]) -> Result<String> {
    if gradients.is_empty() {
        return Err(Error::validation("cannot aggregate an empty gradient list"));
    }
    Ok(gradients
        .iter()
        .enumerate()
        .map(|(i, g)| format!("Feedback {}: {}", i + 1, g.feedback))
        .collect::<Vec<_>>()
        .join("\n\n"))
}

/// `<CONVERSATION>` payload built from a creation context using the
/// glossary's tag vocabulary.
pub fn render_conversation(registry: &TemplateRegistry, ctx: &ConversationContext) -> Result<String> {
    registry.render(
        names::CONVERSATION,
        &[
            ("system_text", ctx.system_text.as_str()),
            ("input_text", ctx.input_text.as_str()),
            ("output_text", ctx.output_text.as_str()),
        ],
    )
}

/// User text of one gradient-elicitation call.
pub fn gradient_prompt(
    registry: &TemplateRegistry,
    family: PromptFamily,
    context: &ConversationContext,
    loss_feedback: &str,
    response_desc: &str,
    variable_desc: &str,
    history: &PastIterations,
) -> Result<String> {
    let conversation = render_conversation(registry, context)?;
    let mut bindings = vec![
        ("context", conversation.as_str()),
        ("response_desc", response_desc),
        ("variable_desc", variable_desc),
        ("feedback", loss_feedback),
    ];
    let serialized;
    if family.carries_history() {
        serialized = serialize_history(history);
        bindings.push(("past_values", serialized.as_str()));
    }
    registry.render(family.gradient_template(), &bindings)
}

/// System text of a gradient-elicitation call (glossary appended).
pub fn backward_system_prompt(registry: &TemplateRegistry) -> Result<String> {
    let glossary = registry.glossary()?;
    registry.render(names::BACKWARD_SYSTEM, &[("GLOSSARY_TEXT", glossary)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> ConversationContext {
        ConversationContext {
            system_text: "the prompt".into(),
            input_text: "the question".into(),
            output_text: "the answer".into(),
        }
    }

    fn history_of(n: u32) -> PastIterations {
        let mut h = PastIterations::new();
        for i in 1..=n {
            h.push(HistoryEntry {
                iteration: i,
                variable_value: format!("value-{i}"),
                response: format!("response-{i}"),
                loss_text: format!("loss-{i}"),
            })
            .unwrap();
        }
        h
    }

    #[test]
    fn serialize_empty_history() {
        assert_eq!(serialize_history(&PastIterations::new()), "");
    }

    #[test]
    fn serialize_single_entry_has_one_header() {
        let s = serialize_history(&history_of(1));
        assert_eq!(s.matches("Iteration 1:").count(), 1);
        assert!(s.contains("Variable:\nvalue-1\nResponse:\nresponse-1\nFeedback:\nloss-1"));
    }

    #[test]
    fn truncation_keeps_original_indices() {
        let mut h = PastIterations::with_cap(Some(2));
        for i in 1..=3 {
            h.push(HistoryEntry {
                iteration: i,
                variable_value: format!("v{i}"),
                response: String::new(),
                loss_text: String::new(),
            })
            .unwrap();
        }
        let s = serialize_history(&h);
        assert!(!s.contains("Iteration 1:"));
        assert!(s.contains("Iteration 2:"));
        assert!(s.contains("Iteration 3:"));
    }

    #[test]
    fn non_increasing_iteration_rejected() {
        let mut h = history_of(2);
        let err = h
            .push(HistoryEntry {
                iteration: 2,
                variable_value: String::new(),
                response: String::new(),
                loss_text: String::new(),
            })
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn revolve_prompt_embeds_history_in_order() {
        let registry = TemplateRegistry::builtin().unwrap();
        let h = history_of(2);
        let text = gradient_prompt(
            &registry,
            PromptFamily::Revolve,
            &ctx(),
            "too vague",
            "the answer to a question",
            "the system prompt",
            &h,
        )
        .unwrap();
        assert!(text.contains("value-1"));
        assert!(text.contains("value-2"));
        assert!(text.find("value-1").unwrap() < text.find("value-2").unwrap());
        let interior_start = text.find("<PAST_ITERATIONS>").unwrap() + "<PAST_ITERATIONS>".len();
        let interior_end = text.find("</PAST_ITERATIONS>").unwrap();
        assert_eq!(&text[interior_start..interior_end], serialize_history(&h));
        assert!(text.contains(
            "Make sure future responses reflect a meaningful, gradual evolution based on these past iterations"
        ));
    }

    #[test]
    fn tgd_prompt_has_no_history_block() {
        let registry = TemplateRegistry::builtin().unwrap();
        let text = gradient_prompt(
            &registry,
            PromptFamily::Tgd,
            &ctx(),
            "too vague",
            "the answer to a question",
            "the system prompt",
            &history_of(2),
        )
        .unwrap();
        assert!(!text.contains("PAST_ITERATIONS"));
        assert!(!text.contains("gradual evolution"));
    }

    #[test]
    fn revolve_at_t1_is_tgd_plus_scaffolding() {
        let registry = TemplateRegistry::builtin().unwrap();
        let empty = PastIterations::new();
        let revolve = gradient_prompt(
            &registry,
            PromptFamily::Revolve,
            &ctx(),
            "fb",
            "rd",
            "vd",
            &empty,
        )
        .unwrap();
        let tgd =
            gradient_prompt(&registry, PromptFamily::Tgd, &ctx(), "fb", "rd", "vd", &empty).unwrap();
        let scaffolding = "\nAdditionally, consider how the responses to this variable have changed across previous iterations:\n<PAST_ITERATIONS></PAST_ITERATIONS>\nMake sure future responses reflect a meaningful, gradual evolution based on these past iterations, encouraging thoughtful progress rather than drastic shifts.";
        assert_eq!(revolve.replace(scaffolding, ""), tgd);
    }

    #[test]
    fn aggregate_numbers_in_order() {
        let g = |text: &str| TextualGradient {
            feedback: text.into(),
            context: ConversationContext::default(),
            source: crate::graph::VariableId::from_raw(0),
        };
        let one = aggregate_feedback(&[g("be brief")]).unwrap();
        assert_eq!(one, "Feedback 1: be brief");
        let two = aggregate_feedback(&[g("be brief"), g("show units")]).unwrap();
        assert_eq!(two, "Feedback 1: be brief\n\nFeedback 2: show units");
        let swapped = aggregate_feedback(&[g("show units"), g("be brief")]).unwrap();
        assert_ne!(two, swapped);
        assert!(aggregate_feedback(&[]).is_err());
    }
}
