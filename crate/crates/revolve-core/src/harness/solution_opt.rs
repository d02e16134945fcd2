//! Test-time solution optimization with majority voting.
//!
//! Iteration 0 produces the initial solution; each optimization iteration
//! then makes exactly three engine calls — evaluate the test-time loss
//! (self-evaluation, no ground truth), collect the gradient, update the
//! solution — and the final answer is the majority vote over the answers
//! extracted from every iteration, iteration 0 included.

use serde_json::{json, Value};

use super::{majority_vote, Harness, IterationRecord};
use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::graph::{BackwardOptions, ConversationContext, Graph};
use crate::loss::textual_loss;
use crate::metrics::{exact_match_letter, extract_final_letter, MetricResult};
use crate::optim;
use crate::prompts::{HistoryEntry, PastIterations};
use crate::runlog::{
    RunLogWriter, RECORD_FORWARD, RECORD_GRADIENT, RECORD_ITERATION_SUMMARY, RECORD_LOSS,
    RECORD_OPTIMIZER_STEP,
};
use crate::templates::names;

const SOLUTION_ROLE: &str = "solution to the multiple choice question";
const QUERY_ROLE: &str = "multiple choice question with the answer format instruction";

#[derive(Debug, Clone)]
pub struct SolutionOptSettings {
    pub iterations: u32,
}

impl Default for SolutionOptSettings {
    fn default() -> Self {
        Self { iterations: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct SolutionOutcome {
    pub final_answer: Option<char>,
    pub answers: Vec<Option<char>>,
    pub per_iteration: Vec<IterationRecord>,
    pub metric: MetricResult,
    pub graph_snapshot: Value,
}

pub fn optimize_solution(
    h: &Harness<'_>,
    example: &Example,
    settings: &SolutionOptSettings,
    log: &mut RunLogWriter,
) -> Result<SolutionOutcome> {
    let truth = example.answer.trim().chars().next().ok_or_else(|| {
        Error::validation(format!("example '{}' has an empty answer", example.id))
    })?;
    let formatted = h.registry.render(names::QUERY_SOLUTION, &[("question", example.question.as_str())])?;
    let self_eval_instruction = h.registry.get(names::EVAL_SYSTEM_SOLUTION)?.body.clone();

    // Iteration 0: initial generation.
    log.set_iteration(0);
    let mut graph = Graph::new();
    let query = graph.variable(&formatted, QUERY_ROLE, false)?;
    let fwd = graph.forward_call_as(h.base, query, None, h.sampling, SOLUTION_ROLE)?;
    let mut solution = graph.get(fwd.response)?.value.clone();
    log.write(
        RECORD_FORWARD,
        json!({
            "example_id": example.id,
            "node": fwd.response.raw(),
            "request_digest": fwd.request_digest,
            "response": solution,
        }),
    )?;
    let mut answers = vec![extract_final_letter(&solution)];
    let mut per_iteration = vec![IterationRecord {
        iteration: 0,
        variable_value: solution.clone(),
        response: solution.clone(),
        loss_text: String::new(),
        metric: Some(exact_match_letter(&solution, truth)?),
    }];

    let mut history = PastIterations::with_cap(h.optimizer_config.max_history);
    let mut feedback_log: Vec<String> = Vec::new();
    let mut graph_snapshot = graph.snapshot_json();

    for iteration in 1..=settings.iterations {
        log.set_iteration(iteration);
        let mut graph = Graph::new();
        let context = ConversationContext {
            system_text: String::new(),
            input_text: formatted.clone(),
            output_text: solution.clone(),
        };
        let solution_var = graph.derived(&solution, SOLUTION_ROLE, true, &[], Some(context))?;

        // Test-time loss: the evaluator never sees the ground truth.
        let loss = textual_loss(&mut graph, h.optimizer, &self_eval_instruction, solution_var, None, h.sampling)?;
        let loss_text = graph.get(loss.loss_variable)?.value.clone();
        log.write(
            RECORD_LOSS,
            json!({
                "example_id": example.id,
                "node": loss.loss_variable.raw(),
                "request_digest": loss.request_digest,
                "loss_text": loss_text,
            }),
        )?;

        let options = BackwardOptions {
            family: h.mode.prompt_family(),
            history: &history,
            registry: h.registry,
            params: h.sampling,
        };
        for event in graph.backward(loss.loss_variable, h.optimizer, &options)? {
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

        let step = optim::step(
            &h.optimizer_config,
            h.optimizer,
            h.registry,
            graph.get(solution_var)?,
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

        history.push(HistoryEntry {
            iteration,
            variable_value: solution.clone(),
            response: solution.clone(),
            loss_text: loss_text.clone(),
        })?;
        for gradient in &graph.get(solution_var)?.gradients {
            feedback_log.push(gradient.feedback.clone());
        }

        solution = step.new_value;
        answers.push(extract_final_letter(&solution));
        per_iteration.push(IterationRecord {
            iteration,
            variable_value: solution.clone(),
            response: solution.clone(),
            loss_text,
            metric: Some(exact_match_letter(&solution, truth)?),
        });
        graph_snapshot = graph.snapshot_json();
    }

    let final_answer = majority_vote(&answers);
    let metric = MetricResult {
        value: if final_answer == Some(truth) { 1.0 } else { 0.0 },
        kind: crate::metrics::MetricKind::ExactMatchLetter,
        extracted: final_answer.map(|c| c.to_string()).unwrap_or_default(),
    };
    log.write(
        RECORD_ITERATION_SUMMARY,
        json!({
            "example_id": example.id,
            "final_answer": metric.extracted,
            "answers": answers.iter().map(|a| a.map(|c| c.to_string()).unwrap_or_default()).collect::<Vec<_>>(),
            "metric": metric.value,
        }),
    )?;

    Ok(SolutionOutcome { final_answer, answers, per_iteration, metric, graph_snapshot })
}
