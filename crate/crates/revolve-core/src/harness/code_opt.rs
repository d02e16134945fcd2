//! Code optimization against local tests.
//!
//! Zero-shot initial generation, then up to N refinement iterations: run
//! the local assertions in the sandboxed executor, feed the pass/fail
//! report into the textual loss, backpropagate, update the code variable,
//! and stop early as soon as every local test passes. The REVOLVE history
//! records the test report as the response each code version produced.

use serde_json::{json, Value};

use super::Harness;
use crate::dataset::CodeProblem;
use crate::error::Result;
use crate::exec::{extract_code, format_test_report, Executor, TestOutcome};
use crate::graph::{BackwardOptions, ConversationContext, Graph};
use crate::loss::textual_loss_with;
use crate::optim;
use crate::prompts::{HistoryEntry, PastIterations};
use crate::runlog::{
    RunLogWriter, RECORD_FORWARD, RECORD_GRADIENT, RECORD_ITERATION_SUMMARY, RECORD_LOSS,
    RECORD_OPTIMIZER_STEP,
};
use crate::templates::names;

const CODE_ROLE: &str = "python code solving the problem";
const CODEGEN_QUERY_ROLE: &str = "coding problem statement and signature";

#[derive(Debug, Clone)]
pub struct CodeOptSettings {
    pub iterations: u32,
}

impl Default for CodeOptSettings {
    fn default() -> Self {
        Self { iterations: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct CodeOutcome {
    pub final_code: String,
    pub passed_local: bool,
    pub optimizer_steps: u32,
    pub graph_snapshot: Value,
}

fn all_passed(outcomes: &[TestOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

pub fn optimize_code(
    h: &Harness<'_>,
    executor: &Executor,
    problem: &CodeProblem,
    settings: &CodeOptSettings,
    log: &mut RunLogWriter,
) -> Result<CodeOutcome> {
    executor.check_available()?;
    let codegen_system = h.registry.get(names::CODEGEN_SYSTEM)?.body.clone();
    let code_eval_instruction = h.registry.get(names::EVAL_SYSTEM_CODE)?.body.clone();
    let query = h.registry.render(
        names::CODEGEN_QUERY,
        &[("statement", problem.statement.as_str()), ("signature", problem.signature.as_str())],
    )?;

    // Zero-shot initial generation.
    log.set_iteration(0);
    let mut graph = Graph::new();
    let system_var = graph.variable(&codegen_system, "code generation instruction", false)?;
    let query_var = graph.variable(&query, CODEGEN_QUERY_ROLE, false)?;
    let fwd = graph.forward_call_as(h.base, system_var, Some(query_var), h.sampling, CODE_ROLE)?;
    let raw = graph.get(fwd.response)?.value.clone();
    let mut code = extract_code(&raw);
    log.write(
        RECORD_FORWARD,
        json!({
            "example_id": problem.id,
            "node": fwd.response.raw(),
            "request_digest": fwd.request_digest,
            "response": raw,
        }),
    )?;

    let mut outcomes = executor.run_tests(&code, &problem.local_tests)?;
    let mut passed = all_passed(&outcomes);
    log.write(
        RECORD_ITERATION_SUMMARY,
        json!({
            "example_id": problem.id,
            "tests_passed": outcomes.iter().filter(|o| o.passed).count(),
            "tests_total": outcomes.len(),
            "all_passed": passed,
        }),
    )?;

    let mut history = PastIterations::with_cap(h.optimizer_config.max_history);
    let mut feedback_log: Vec<String> = Vec::new();
    let mut optimizer_steps = 0;
    let mut graph_snapshot = graph.snapshot_json();

    for iteration in 1..=settings.iterations {
        if passed {
            break;
        }
        log.set_iteration(iteration);
        let report = format_test_report(&outcomes);

        let mut graph = Graph::new();
        let context = ConversationContext {
            system_text: codegen_system.clone(),
            input_text: query.clone(),
            output_text: code.clone(),
        };
        let code_var = graph.derived(&code, CODE_ROLE, true, &[], Some(context))?;
        let loss_user = h.registry.render(
            names::EVAL_QUERY_CODE,
            &[
                ("statement", problem.statement.as_str()),
                ("code", code.as_str()),
                ("test_report", report.as_str()),
            ],
        )?;
        let loss = textual_loss_with(
            &mut graph,
            h.optimizer,
            &code_eval_instruction,
            loss_user,
            code_var,
            h.sampling,
        )?;
        let loss_text = graph.get(loss.loss_variable)?.value.clone();
        log.write(
            RECORD_LOSS,
            json!({
                "example_id": problem.id,
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
            graph.get(code_var)?,
            &history,
            &feedback_log,
            h.sampling,
        )?;
        optimizer_steps += 1;
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
            variable_value: code.clone(),
            response: report,
            loss_text,
        })?;
        for gradient in &graph.get(code_var)?.gradients {
            feedback_log.push(gradient.feedback.clone());
        }

        code = extract_code(&step.new_value);
        outcomes = executor.run_tests(&code, &problem.local_tests)?;
        passed = all_passed(&outcomes);
        log.write(
            RECORD_ITERATION_SUMMARY,
            json!({
                "example_id": problem.id,
                "tests_passed": outcomes.iter().filter(|o| o.passed).count(),
                "tests_total": outcomes.len(),
                "all_passed": passed,
            }),
        )?;
        graph_snapshot = graph.snapshot_json();
    }

    Ok(CodeOutcome { final_code: code, passed_local: passed, optimizer_steps, graph_snapshot })
}
