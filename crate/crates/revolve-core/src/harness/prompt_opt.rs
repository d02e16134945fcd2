//! Prompt optimization with validation gating.
//!
//! Per iteration: sample a batch of training examples with replacement,
//! forward each through the current prompt, compute per-example textual
//! losses with the ground truth visible to the evaluator, backpropagate,
//! take one optimizer step on the aggregated gradients, then score the
//! candidate on the full validation split. The candidate replaces the
//! incumbent only on strict improvement; otherwise the next iteration
//! starts again from the incumbent. The reported metric is the incumbent's
//! test-set accuracy after the final iteration.

use serde_json::{json, Value};

use super::{evaluate_split, numbered_join, Harness};
use crate::dataset::{sample_batch, Example};
use crate::error::{Error, Result};
use crate::graph::{BackwardOptions, Graph};
use crate::loss::textual_loss;
use crate::metrics::{accuracy, MetricKind};
use crate::optim;
use crate::prompts::{HistoryEntry, PastIterations};
use crate::rng::SplitMix64;
use crate::runlog::{
    RunLogWriter, RECORD_FORWARD, RECORD_GRADIENT, RECORD_ITERATION_SUMMARY, RECORD_LOSS,
    RECORD_OPTIMIZER_STEP, RECORD_VALIDATION,
};
use crate::templates::names;

pub const PROMPT_ROLE: &str = "system prompt to the language model";
const QUESTION_ROLE: &str = "question to be answered";
const RESPONSE_ROLE: &str = "the model's answer to the question";

#[derive(Debug, Clone)]
pub struct PromptOptSettings {
    pub batch_size: usize,
    pub iterations: u32,
    pub initial_prompt: String,
    pub metric: MetricKind,
    pub seed: u64,
    /// Accept candidates that tie the incumbent (the gating default is
    /// strict improvement).
    pub accept_equal: bool,
}

#[derive(Debug, Clone)]
pub struct PromptOptOutcome {
    pub best_prompt: String,
    pub test_accuracy: f64,
    pub val_accuracy: f64,
    pub accepted_iterations: Vec<u32>,
    pub graph_snapshot: Value,
}

pub fn optimize_prompt(
    h: &Harness<'_>,
    train: &[Example],
    val: &[Example],
    test: &[Example],
    settings: &PromptOptSettings,
    log: &mut RunLogWriter,
) -> Result<PromptOptOutcome> {
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Config("prompt optimization needs non-empty train/val/test splits".into()));
    }
    let mut rng = SplitMix64::new(settings.seed);
    let evaluator_instruction = h.registry.get(names::EVAL_SYSTEM_TRAINING)?.body.clone();

    let mut incumbent = settings.initial_prompt.clone();
    log.set_iteration(0);
    let mut incumbent_acc =
        accuracy(&evaluate_split(h.base, &incumbent, val, h.sampling, settings.metric)?)?;
    log.write(
        RECORD_VALIDATION,
        json!({
            "candidate_accuracy": incumbent_acc,
            "incumbent_accuracy_before": incumbent_acc,
            "incumbent_accuracy_after": incumbent_acc,
            "accepted": true,
            "initial": true,
        }),
    )?;

    let mut history = PastIterations::with_cap(h.optimizer_config.max_history);
    let mut feedback_log: Vec<String> = Vec::new();
    let mut accepted_iterations = Vec::new();
    let mut graph_snapshot = Value::Null;

    for iteration in 1..=settings.iterations {
        log.set_iteration(iteration);
        let current_prompt = incumbent.clone();
        let mut graph = Graph::new();
        let prompt_var = graph.variable(&current_prompt, PROMPT_ROLE, true)?;

        let batch = sample_batch(train, settings.batch_size, &mut rng)?;
        let mut responses = Vec::with_capacity(batch.len());
        for example in &batch {
            let q = graph.variable(&example.question, QUESTION_ROLE, false)?;
            let fwd = graph.forward_call_as(h.base, prompt_var, Some(q), h.sampling, RESPONSE_ROLE)?;
            log.write(
                RECORD_FORWARD,
                json!({
                    "example_id": example.id,
                    "node": fwd.response.raw(),
                    "request_digest": fwd.request_digest,
                    "response": graph.get(fwd.response)?.value,
                    "split": "train",
                }),
            )?;
            responses.push((example.clone(), fwd.response));
        }

        let mut losses = Vec::with_capacity(responses.len());
        for (example, response) in &responses {
            let loss = textual_loss(
                &mut graph,
                h.optimizer,
                &evaluator_instruction,
                *response,
                Some(&example.answer),
                h.sampling,
            )?;
            log.write(
                RECORD_LOSS,
                json!({
                    "example_id": example.id,
                    "node": loss.loss_variable.raw(),
                    "request_digest": loss.request_digest,
                    "loss_text": graph.get(loss.loss_variable)?.value,
                }),
            )?;
            losses.push(loss);
        }

        let options = BackwardOptions {
            family: h.mode.prompt_family(),
            history: &history,
            registry: h.registry,
            params: h.sampling,
        };
        for loss in &losses {
            let events = graph.backward(loss.loss_variable, h.optimizer, &options)?;
            for event in events {
                log.write(
                    RECORD_GRADIENT,
                    json!({
                        "variable": event.variable.raw(),
                        "source": event.source.raw(),
                        "prompt_digest": event.request_digest,
                        "feedback": event.feedback,
                    }),
                )?;
            }
        }

        let step = optim::step(
            &h.optimizer_config,
            h.optimizer,
            h.registry,
            graph.get(prompt_var)?,
            &history,
            &feedback_log,
            h.sampling,
        )?;
        log.write(
            RECORD_OPTIMIZER_STEP,
            json!({
                "flavor": h.optimizer_config.flavor.to_string(),
                "attempts": step.attempts,
                "parsed": step.parsed,
                "prompt_digests": step.request_digests,
            }),
        )?;

        let candidate = step.new_value;
        let candidate_acc =
            accuracy(&evaluate_split(h.base, &candidate, val, h.sampling, settings.metric)?)?;
        let accepted = candidate_acc > incumbent_acc
            || (settings.accept_equal && candidate_acc == incumbent_acc);
        let before = incumbent_acc;
        if accepted {
            incumbent = candidate.clone();
            incumbent_acc = candidate_acc;
            accepted_iterations.push(iteration);
        }
        log.write(
            RECORD_VALIDATION,
            json!({
                "candidate_accuracy": candidate_acc,
                "incumbent_accuracy_before": before,
                "incumbent_accuracy_after": incumbent_acc,
                "accepted": accepted,
            }),
        )?;

        // Trajectory entry for the prompt that was actually evaluated this
        // iteration; batch responses and losses join under numbered headers.
        let batch_responses: Vec<String> = responses
            .iter()
            .map(|(_, id)| graph.get(*id).map(|v| v.value.clone()))
            .collect::<Result<_>>()?;
        let batch_losses: Vec<String> = losses
            .iter()
            .map(|l| graph.get(l.loss_variable).map(|v| v.value.clone()))
            .collect::<Result<_>>()?;
        history.push(HistoryEntry {
            iteration,
            variable_value: current_prompt,
            response: numbered_join("Response", &batch_responses),
            loss_text: numbered_join("Feedback", &batch_losses),
        })?;
        for gradient in &graph.get(prompt_var)?.gradients {
            feedback_log.push(gradient.feedback.clone());
        }

        log.write(
            RECORD_ITERATION_SUMMARY,
            json!({
                "metric": candidate_acc,
                "incumbent_accuracy": incumbent_acc,
                "accepted": accepted,
                "history_len": history.len(),
            }),
        )?;
        graph_snapshot = graph.snapshot_json();
    }

    let test_accuracy =
        accuracy(&evaluate_split(h.base, &incumbent, test, h.sampling, settings.metric)?)?;
    Ok(PromptOptOutcome {
        best_prompt: incumbent,
        test_accuracy,
        val_accuracy: incumbent_acc,
        accepted_iterations,
        graph_snapshot,
    })
}
