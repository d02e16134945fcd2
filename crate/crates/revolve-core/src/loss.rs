//! Language loss: an evaluator model's textual critique of a response,
//! wrapped as a loss variable downstream of that response.

use crate::engine::{cache_key, Engine, EngineRequest, SamplingParams};
use crate::error::Result;
use crate::graph::{ConversationContext, Graph, VariableId};

pub const LOSS_ROLE: &str = "textual feedback evaluating the response";

/// A computed language loss. The loss variable's predecessors include the
/// evaluated response.
#[derive(Debug, Clone)]
pub struct LanguageLoss {
    pub loss_variable: VariableId,
    pub evaluator_instruction: String,
    pub evaluated: VariableId,
    pub request_digest: String,
}

/// Issue one evaluator call with an explicit user text (the caller controls
/// exactly what the evaluator sees) and register the critique as a loss
/// variable downstream of `response`.
pub fn textual_loss_with(
    graph: &mut Graph,
    engine: &dyn Engine,
    instruction: &str,
    user_text: String,
    response: VariableId,
    params: SamplingParams,
) -> Result<LanguageLoss> {
    if instruction.is_empty() {
        return Err(crate::error::Error::validation("evaluator instruction must be non-empty"));
    }
    graph.get(response)?;
    let request = EngineRequest {
        model_id: engine.model_id().to_string(),
        system_text: instruction.to_string(),
        user_text,
        params,
    };
    let request_digest = cache_key(&request);
    let completion = engine.generate(&request)?;
    let context = ConversationContext {
        system_text: request.system_text,
        input_text: request.user_text,
        output_text: completion.text.clone(),
    };
    let loss_variable =
        graph.derived(completion.text, LOSS_ROLE, false, &[response], Some(context))?;
    graph.record_call(loss_variable);
    Ok(LanguageLoss {
        loss_variable,
        evaluator_instruction: instruction.to_string(),
        evaluated: response,
        request_digest,
    })
}

/// Standard evaluator call: the user text embeds the response, the original
/// input when the response has a creation context, and the reference answer
/// when given (training-time evaluation sees ground truth, test-time
/// self-evaluation does not).
pub fn textual_loss(
    graph: &mut Graph,
    engine: &dyn Engine,
    instruction: &str,
    response: VariableId,
    reference: Option<&str>,
    params: SamplingParams,
) -> Result<LanguageLoss> {
    let response_var = graph.get(response)?;
    let mut user_text = String::new();
    if let Some(ctx) = &response_var.creation_context {
        if !ctx.input_text.is_empty() {
            user_text.push_str(&format!("Question:\n{}\n\n", ctx.input_text));
        }
    }
    user_text.push_str(&format!("Response:\n{}", response_var.value));
    if let Some(truth) = reference {
        user_text.push_str(&format!("\n\nGround truth answer:\n{truth}"));
    }
    textual_loss_with(graph, engine, instruction, user_text, response, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Matcher, ScriptEntry, ScriptedEngine};

    fn engine(feedback: &str) -> ScriptedEngine {
        ScriptedEngine::new("eval", vec![ScriptEntry::new(Matcher::substring(""), feedback)])
    }

    fn graph_with_response(value: &str) -> (Graph, VariableId) {
        let mut g = Graph::new();
        let ctx = ConversationContext {
            system_text: "solve it".into(),
            input_text: "how many?".into(),
            output_text: value.into(),
        };
        let r = g.derived(value, "response from the language model", true, &[], Some(ctx)).unwrap();
        (g, r)
    }

    #[test]
    fn loss_value_is_the_critique() {
        let (mut g, r) = graph_with_response("Answer: 7");
        let e = engine("The reasoning skips the unit conversion.");
        let loss =
            textual_loss(&mut g, &e, "evaluate", r, None, SamplingParams::default()).unwrap();
        assert_eq!(g.get(loss.loss_variable).unwrap().value, "The reasoning skips the unit conversion.");
    }

    #[test]
    fn loss_links_to_response() {
        let (mut g, r) = graph_with_response("Answer: 7");
        let e = engine("fb");
        let loss =
            textual_loss(&mut g, &e, "evaluate", r, None, SamplingParams::default()).unwrap();
        assert!(g.get(loss.loss_variable).unwrap().predecessors.contains(&r));
        assert_eq!(loss.evaluated, r);
    }

    #[test]
    fn distinct_responses_get_distinct_losses() {
        let mut g = Graph::new();
        let r1 = g.derived("Answer: 1", "response", true, &[], None).unwrap();
        let r2 = g.derived("Answer: 2", "response", true, &[], None).unwrap();
        let e = engine("fb");
        let l1 = textual_loss(&mut g, &e, "evaluate", r1, None, SamplingParams::default()).unwrap();
        let l2 = textual_loss(&mut g, &e, "evaluate", r2, None, SamplingParams::default()).unwrap();
        assert_ne!(l1.loss_variable, l2.loss_variable);
        assert_ne!(l1.evaluated, l2.evaluated);
    }

    #[test]
    fn reference_and_question_are_embedded() {
        let (mut g, r) = graph_with_response("Answer: 7");
        let e = engine("fb");
        textual_loss(&mut g, &e, "evaluate", r, Some("15"), SamplingParams::default()).unwrap();
        let req = &e.requests()[0];
        assert!(req.user_text.contains("Question:\nhow many?"));
        assert!(req.user_text.contains("Response:\nAnswer: 7"));
        assert!(req.user_text.contains("Ground truth answer:\n15"));
    }

    #[test]
    fn empty_instruction_rejected() {
        let (mut g, r) = graph_with_response("x");
        let e = engine("fb");
        assert!(textual_loss(&mut g, &e, "", r, None, SamplingParams::default()).is_err());
    }
}
