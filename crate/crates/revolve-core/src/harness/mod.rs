//! The three experimental loops: prompt optimization with validation
//! gating, test-time solution optimization with majority voting, and code
//! optimization against local tests.

mod code_opt;
mod prompt_opt;
mod solution_opt;

pub use code_opt::{optimize_code, CodeOptSettings, CodeOutcome};
pub use prompt_opt::{optimize_prompt, PromptOptSettings, PromptOptOutcome};
pub use solution_opt::{optimize_solution, SolutionOptSettings, SolutionOutcome};

use serde::{Deserialize, Serialize};

use crate::engine::{cache_key, Engine, EngineRequest, SamplingParams};
use crate::error::{Error, Result};
use crate::metrics::{exact_match_letter, exact_match_numeric, MetricKind, MetricResult};
use crate::optim::{OptimizerConfig, OptimizerFlavor};
use crate::prompts::PromptFamily;
use crate::templates::TemplateRegistry;

/// Run-level optimization mode: the gradient flavour plus the optimizer
/// flavour it implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Tgd,
    Momentum,
    Revolve,
    Variant,
}

impl RunMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "tgd" | "textgrad" => Ok(RunMode::Tgd),
            "momentum" | "m-tgd" => Ok(RunMode::Momentum),
            "revolve" => Ok(RunMode::Revolve),
            "variant" => Ok(RunMode::Variant),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected tgd, momentum, revolve or variant)"
            ))),
        }
    }

    pub fn optimizer_flavor(self) -> OptimizerFlavor {
        match self {
            RunMode::Tgd => OptimizerFlavor::Tgd,
            RunMode::Momentum => OptimizerFlavor::Momentum,
            RunMode::Revolve => OptimizerFlavor::Revolve,
            RunMode::Variant => OptimizerFlavor::Variant,
        }
    }

    /// Template family used by backward in this mode. Momentum reuses the
    /// first-order gradients.
    pub fn prompt_family(self) -> PromptFamily {
        self.optimizer_flavor().prompt_family()
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RunMode::Tgd => "tgd",
            RunMode::Momentum => "momentum",
            RunMode::Revolve => "revolve",
            RunMode::Variant => "variant",
        };
        f.write_str(s)
    }
}

/// One iteration of a variable's trajectory, as recorded by the harnesses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub variable_value: String,
    pub response: String,
    pub loss_text: String,
    pub metric: Option<MetricResult>,
}

/// Engines and shared configuration for one run. The base engine answers
/// task queries; the optimizer engine computes losses, gradients and
/// updates (the same instance for self-optimizing tasks).
pub struct Harness<'a> {
    pub base: &'a dyn Engine,
    pub optimizer: &'a dyn Engine,
    pub registry: &'a TemplateRegistry,
    pub mode: RunMode,
    pub optimizer_config: OptimizerConfig,
    pub sampling: SamplingParams,
}

/// Order-preserving map over a slice; data-parallel when the `parallel`
/// feature is enabled.
pub fn try_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

fn score_example(
    engine: &dyn Engine,
    prompt_text: &str,
    example: &crate::dataset::Example,
    params: SamplingParams,
    kind: MetricKind,
) -> Result<MetricResult> {
    let request = EngineRequest {
        model_id: engine.model_id().to_string(),
        system_text: prompt_text.to_string(),
        user_text: example.question.clone(),
        params,
    };
    let _ = cache_key(&request);
    let response = engine.generate(&request)?;
    match kind {
        MetricKind::ExactMatchNumeric => exact_match_numeric(&response.text, &example.answer),
        MetricKind::ExactMatchLetter => {
            let truth = example.answer.trim().chars().next().ok_or_else(|| {
                Error::validation(format!("example '{}' has an empty answer", example.id))
            })?;
            exact_match_letter(&response.text, truth)
        }
        MetricKind::Completion => {
            Err(Error::validation("completion rate is not a per-example metric"))
        }
    }
}

/// Score a prompt over a split: one forward call per example, exact-match
/// metric against the gold answer. Results come back in example order
/// regardless of scheduling, so runs are deterministic either way.
pub fn evaluate_split(
    engine: &dyn Engine,
    prompt_text: &str,
    examples: &[crate::dataset::Example],
    params: SamplingParams,
    kind: MetricKind,
) -> Result<Vec<MetricResult>> {
    try_map(examples, |example| score_example(engine, prompt_text, example, params, kind))
}

/// Always-sequential variant of [`evaluate_split`], kept for the benchmark
/// comparison and as the fallback path.
pub fn evaluate_split_sequential(
    engine: &dyn Engine,
    prompt_text: &str,
    examples: &[crate::dataset::Example],
    params: SamplingParams,
    kind: MetricKind,
) -> Result<Vec<MetricResult>> {
    examples
        .iter()
        .map(|example| score_example(engine, prompt_text, example, params, kind))
        .collect()
}

/// Most frequent non-empty answer; ties break toward the answer whose last
/// occurrence is latest. All-empty votes yield none.
pub fn majority_vote(answers: &[Option<char>]) -> Option<char> {
    let mut counts: Vec<(char, usize, usize)> = Vec::new(); // (letter, count, last index)
    for (i, answer) in answers.iter().enumerate() {
        if let Some(letter) = answer {
            match counts.iter_mut().find(|(l, _, _)| l == letter) {
                Some(entry) => {
                    entry.1 += 1;
                    entry.2 = i;
                }
                None => counts.push((*letter, 1, i)),
            }
        }
    }
    counts
        .into_iter()
        .max_by_key(|(_, count, last)| (*count, *last))
        .map(|(letter, _, _)| letter)
}

/// "Prefix 1: a\n\nPrefix 2: b" joins for batch-level history entries.
pub(crate) fn numbered_join(prefix: &str, items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{} {}: {}", prefix, i + 1, item))
        .collect::<Vec<_>>()
        .join("\n\n")
}
