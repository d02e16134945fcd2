//! Computation graph of text variables.
//!
//! The forward pass appends nodes (prompts, inputs, responses, losses) to a
//! per-run graph; `backward` walks the ancestors of a loss in reverse
//! topological order and attaches one natural-language gradient per
//! (predecessor, successor) edge, eliciting each gradient with one engine
//! call. Variables are never mutated in place by backward; optimizers
//! produce new values and the harness rebuilds the next iteration's graph.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engine::{cache_key, Engine, EngineRequest, SamplingParams};
use crate::error::{Error, Result};
use crate::prompts::{
    aggregate_feedback, backward_system_prompt, gradient_prompt, PastIterations, PromptFamily,
};
use crate::templates::TemplateRegistry;

/// Graph-local variable identifier. Ids are assigned in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VariableId(u64);

impl VariableId {
    pub fn from_raw(raw: u64) -> Self {
        VariableId(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

impl std::fmt::Display for VariableId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// The conversation that created a variable: the `<CONVERSATION>` payload.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationContext {
    pub system_text: String,
    pub input_text: String,
    pub output_text: String,
}

/// One piece of natural-language feedback attached to a variable. `source`
/// is the immediate downstream variable whose feedback produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextualGradient {
    pub feedback: String,
    pub context: ConversationContext,
    pub source: VariableId,
}

/// A text value under optimization (or a frozen input/response node).
#[derive(Debug, Clone)]
pub struct Variable {
    pub id: VariableId,
    pub value: String,
    pub role_description: String,
    pub requires_grad: bool,
    pub predecessors: Vec<VariableId>,
    pub gradients: Vec<TextualGradient>,
    pub creation_context: Option<ConversationContext>,
}

/// Result of a forward engine call: the response node plus the request
/// digest for run logging.
#[derive(Debug, Clone)]
pub struct ForwardOutcome {
    pub response: VariableId,
    pub request_digest: String,
}

/// One gradient application performed by `backward`, for run logging.
#[derive(Debug, Clone)]
pub struct GradientEvent {
    pub variable: VariableId,
    pub source: VariableId,
    pub request_digest: String,
    pub feedback: String,
}

/// Options for one backward pass. The history is owned by the harness; it
/// is embedded into every gradient prompt when the family carries history.
pub struct BackwardOptions<'a> {
    pub family: PromptFamily,
    pub history: &'a PastIterations,
    pub registry: &'a TemplateRegistry,
    pub params: SamplingParams,
}

const RESPONSE_ROLE: &str = "response from the language model";

/// Append-only graph confined to one optimization run.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Variable>,
    trajectory: Vec<VariableId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a fresh leaf variable. Value and role must be non-empty.
    pub fn variable(
        &mut self,
        value: impl Into<String>,
        role_description: impl Into<String>,
        requires_grad: bool,
    ) -> Result<VariableId> {
        let value = value.into();
        let role_description = role_description.into();
        if value.is_empty() {
            return Err(Error::validation("variable value must be non-empty"));
        }
        if role_description.is_empty() {
            return Err(Error::validation("variable role description must be non-empty"));
        }
        Ok(self.insert(value, role_description, requires_grad, Vec::new(), None))
    }

    /// Register a node derived from existing predecessors. An empty value is
    /// allowed here so an empty backend completion can be recorded.
    pub fn derived(
        &mut self,
        value: impl Into<String>,
        role_description: impl Into<String>,
        requires_grad: bool,
        predecessors: &[VariableId],
        creation_context: Option<ConversationContext>,
    ) -> Result<VariableId> {
        let role_description = role_description.into();
        if role_description.is_empty() {
            return Err(Error::validation("variable role description must be non-empty"));
        }
        for p in predecessors {
            self.check_id(*p)?;
        }
        Ok(self.insert(
            value.into(),
            role_description,
            requires_grad,
            predecessors.to_vec(),
            creation_context,
        ))
    }

    fn insert(
        &mut self,
        value: String,
        role_description: String,
        requires_grad: bool,
        predecessors: Vec<VariableId>,
        creation_context: Option<ConversationContext>,
    ) -> VariableId {
        let id = VariableId(self.nodes.len() as u64);
        self.nodes.push(Variable {
            id,
            value,
            role_description,
            requires_grad,
            predecessors,
            gradients: Vec::new(),
            creation_context,
        });
        id
    }

    fn check_id(&self, id: VariableId) -> Result<usize> {
        let idx = id.0 as usize;
        if idx >= self.nodes.len() {
            return Err(Error::UnknownVariable(id.to_string()));
        }
        Ok(idx)
    }

    pub fn get(&self, id: VariableId) -> Result<&Variable> {
        Ok(&self.nodes[self.check_id(id)?])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Response nodes in invocation order.
    pub fn trajectory(&self) -> &[VariableId] {
        &self.trajectory
    }

    pub(crate) fn record_call(&mut self, id: VariableId) {
        self.trajectory.push(id);
    }

    /// One forward engine call with the default response role.
    pub fn forward_call(
        &mut self,
        engine: &dyn Engine,
        prompt: VariableId,
        input: Option<VariableId>,
        params: SamplingParams,
    ) -> Result<ForwardOutcome> {
        self.forward_call_as(engine, prompt, input, params, RESPONSE_ROLE)
    }

    /// One forward engine call. The response node's predecessors are the
    /// prompt and (when given) the input; its creation context records the
    /// prompt as system text, the input (or empty) as input text, and the
    /// completion as output text.
    pub fn forward_call_as(
        &mut self,
        engine: &dyn Engine,
        prompt: VariableId,
        input: Option<VariableId>,
        params: SamplingParams,
        response_role: &str,
    ) -> Result<ForwardOutcome> {
        let prompt_value = self.get(prompt)?.value.clone();
        let input_value = match input {
            Some(id) => Some(self.get(id)?.value.clone()),
            None => None,
        };
        // The chat protocol needs a non-empty user message; a prompt-only
        // call sends the prompt text as the user message.
        let request = EngineRequest {
            model_id: engine.model_id().to_string(),
            system_text: if input_value.is_some() { prompt_value.clone() } else { String::new() },
            user_text: input_value.clone().unwrap_or_else(|| prompt_value.clone()),
            params,
        };
        let request_digest = cache_key(&request);
        let response = engine.generate(&request)?;
        let context = ConversationContext {
            system_text: prompt_value,
            input_text: input_value.unwrap_or_default(),
            output_text: response.text.clone(),
        };
        let mut predecessors = vec![prompt];
        if let Some(id) = input {
            predecessors.push(id);
        }
        let id =
            self.derived(response.text, response_role, true, &predecessors, Some(context))?;
        self.record_call(id);
        Ok(ForwardOutcome { response: id, request_digest })
    }

    /// Backpropagate textual gradients from `loss` to every ancestor with
    /// `requires_grad`, in reverse topological order with ties broken by
    /// ascending variable id. One engine call per (predecessor, successor)
    /// edge. Frozen nodes neither receive nor forward gradients.
    pub fn backward(
        &mut self,
        loss: VariableId,
        engine: &dyn Engine,
        options: &BackwardOptions<'_>,
    ) -> Result<Vec<GradientEvent>> {
        self.check_id(loss)?;
        self.topological_order()?; // graph-integrity check

        // Ancestor subgraph of the loss, pruned at frozen nodes.
        let mut members: HashSet<VariableId> = HashSet::new();
        members.insert(loss);
        let mut stack = vec![loss];
        while let Some(s) = stack.pop() {
            for &p in &self.nodes[s.0 as usize].predecessors {
                if self.nodes[p.0 as usize].requires_grad && members.insert(p) {
                    stack.push(p);
                }
            }
        }

        // Pending successor-edge counts within the subgraph.
        let mut pending: HashMap<VariableId, usize> = HashMap::new();
        for &t in &members {
            for &p in &self.nodes[t.0 as usize].predecessors {
                if members.contains(&p) {
                    *pending.entry(p).or_insert(0) += 1;
                }
            }
        }

        let system_text = backward_system_prompt(options.registry)?;
        let mut events = Vec::new();
        let mut ready: BinaryHeap<Reverse<VariableId>> = BinaryHeap::new();
        ready.push(Reverse(loss));
        let mut processed: HashSet<VariableId> = HashSet::new();

        while let Some(Reverse(s)) = ready.pop() {
            if !processed.insert(s) {
                continue;
            }
            let (feedback, context, response_desc, preds) = {
                let node = &self.nodes[s.0 as usize];
                let feedback = if s == loss {
                    node.value.clone()
                } else {
                    aggregate_feedback(&node.gradients)?
                };
                (
                    feedback,
                    node.creation_context.clone().unwrap_or_default(),
                    node.role_description.clone(),
                    node.predecessors.clone(),
                )
            };
            for p in preds {
                if !members.contains(&p) {
                    continue;
                }
                let user_text = gradient_prompt(
                    options.registry,
                    options.family,
                    &context,
                    &feedback,
                    &response_desc,
                    &self.nodes[p.0 as usize].role_description,
                    options.history,
                )?;
                let request = EngineRequest {
                    model_id: engine.model_id().to_string(),
                    system_text: system_text.clone(),
                    user_text,
                    params: options.params,
                };
                let request_digest = cache_key(&request);
                let response = engine.generate(&request)?;
                self.nodes[p.0 as usize].gradients.push(TextualGradient {
                    feedback: response.text.clone(),
                    context: context.clone(),
                    source: s,
                });
                events.push(GradientEvent {
                    variable: p,
                    source: s,
                    request_digest,
                    feedback: response.text,
                });
                let remaining = pending.get_mut(&p).expect("edge was counted");
                *remaining -= 1;
                if *remaining == 0 {
                    ready.push(Reverse(p));
                }
            }
        }

        if processed.len() != members.len() {
            return Err(Error::GraphIntegrity(
                "backward stalled: cycle among the loss ancestors".into(),
            ));
        }
        Ok(events)
    }

    /// Clear the gradients of the given variables. Idempotent.
    pub fn zero_grad(&mut self, ids: &[VariableId]) -> Result<()> {
        for &id in ids {
            let idx = self.check_id(id)?;
            self.nodes[idx].gradients.clear();
        }
        Ok(())
    }

    pub fn zero_grad_all(&mut self) {
        for node in &mut self.nodes {
            node.gradients.clear();
        }
    }

    /// Topological order over the whole graph, ties by ascending id. Fails
    /// with a graph-integrity error if a cycle exists.
    pub fn topological_order(&self) -> Result<Vec<VariableId>> {
        let mut indegree: Vec<usize> = vec![0; self.nodes.len()];
        for node in &self.nodes {
            for _ in &node.predecessors {
                indegree[node.id.0 as usize] += 1;
            }
        }
        let mut successors: Vec<Vec<VariableId>> = vec![Vec::new(); self.nodes.len()];
        for node in &self.nodes {
            for &p in &node.predecessors {
                successors[p.0 as usize].push(node.id);
            }
        }
        let mut ready: BinaryHeap<Reverse<VariableId>> = BinaryHeap::new();
        for node in &self.nodes {
            if indegree[node.id.0 as usize] == 0 {
                ready.push(Reverse(node.id));
            }
        }
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for &succ in &successors[id.0 as usize] {
                indegree[succ.0 as usize] -= 1;
                if indegree[succ.0 as usize] == 0 {
                    ready.push(Reverse(succ));
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::GraphIntegrity("cycle detected".into()));
        }
        Ok(order)
    }

    /// Debug/report export: nodes with id, role, value and predecessors;
    /// edges are implicit.
    pub fn snapshot_json(&self) -> serde_json::Value {
        json!({
            "nodes": self
                .nodes
                .iter()
                .map(|n| {
                    json!({
                        "id": n.id.raw(),
                        "role": n.role_description,
                        "value": n.value,
                        "predecessors": n.predecessors.iter().map(|p| p.raw()).collect::<Vec<_>>(),
                    })
                })
                .collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Matcher, ScriptEntry, ScriptedEngine};

    fn registry() -> TemplateRegistry {
        TemplateRegistry::builtin().unwrap()
    }

    fn echo_engine(text: &str) -> ScriptedEngine {
        ScriptedEngine::new("scripted", vec![ScriptEntry::new(Matcher::substring(""), text)])
    }

    fn options<'a>(
        registry: &'a TemplateRegistry,
        history: &'a PastIterations,
    ) -> BackwardOptions<'a> {
        BackwardOptions {
            family: PromptFamily::Tgd,
            history,
            registry,
            params: SamplingParams::default(),
        }
    }

    #[test]
    fn new_variable_has_no_predecessors() {
        let mut g = Graph::new();
        let v = g
            .variable(
                "You will answer a reasoning question. Think step by step.",
                "system prompt to the language model",
                true,
            )
            .unwrap();
        let var = g.get(v).unwrap();
        assert!(var.predecessors.is_empty());
        assert!(var.gradients.is_empty());
    }

    #[test]
    fn empty_value_or_role_rejected() {
        let mut g = Graph::new();
        assert!(matches!(g.variable("", "role", true), Err(Error::Validation(_))));
        assert!(matches!(g.variable("v", "", true), Err(Error::Validation(_))));
    }

    #[test]
    fn forward_call_links_prompt_and_input() {
        let mut g = Graph::new();
        let engine = echo_engine("Answer: 7");
        let prompt = g.variable("answer with a number", "system prompt", true).unwrap();
        let q = g.variable("what is 3+4?", "question", false).unwrap();
        let out = g
            .forward_call(&engine, prompt, Some(q), SamplingParams::default())
            .unwrap();
        let response = g.get(out.response).unwrap();
        assert_eq!(response.value, "Answer: 7");
        assert_eq!(response.predecessors, vec![prompt, q]);
        let ctx = response.creation_context.as_ref().unwrap();
        assert_eq!(ctx.system_text, "answer with a number");
        assert_eq!(ctx.input_text, "what is 3+4?");
        assert_eq!(ctx.output_text, "Answer: 7");
    }

    #[test]
    fn prompt_only_call_has_one_predecessor() {
        let mut g = Graph::new();
        let engine = echo_engine("ok");
        let prompt = g.variable("say ok", "instruction", false).unwrap();
        let out = g.forward_call(&engine, prompt, None, SamplingParams::default()).unwrap();
        assert_eq!(g.get(out.response).unwrap().predecessors.len(), 1);
        // The engine still received a non-empty user message.
        assert_eq!(engine.requests()[0].user_text, "say ok");
        assert_eq!(engine.requests()[0].system_text, "");
    }

    #[test]
    fn trajectory_orders_by_invocation() {
        let mut g = Graph::new();
        let engine = echo_engine("r");
        let prompt = g.variable("p", "prompt", true).unwrap();
        let a = g.forward_call(&engine, prompt, None, SamplingParams::default()).unwrap();
        let b = g.forward_call(&engine, prompt, None, SamplingParams::default()).unwrap();
        assert_eq!(g.trajectory(), &[a.response, b.response]);
    }

    #[test]
    fn chain_backward_propagates_feedback() {
        let reg = registry();
        let history = PastIterations::new();
        let mut g = Graph::new();
        let forward = echo_engine("Answer: 7");
        let backward_engine = echo_engine("Be more specific.");

        let prompt = g.variable("solve it", "system prompt to the language model", true).unwrap();
        let q = g.variable("what is 3+4?", "question", false).unwrap();
        let out = g.forward_call(&forward, prompt, Some(q), SamplingParams::default()).unwrap();
        let loss_ctx = ConversationContext {
            system_text: "evaluate the answer".into(),
            input_text: "Answer: 7".into(),
            output_text: "The response is too vague.".into(),
        };
        let loss = g
            .derived(
                "The response is too vague.",
                "textual feedback on the response",
                false,
                &[out.response],
                Some(loss_ctx),
            )
            .unwrap();

        let events = g.backward(loss, &backward_engine, &options(&reg, &history)).unwrap();
        // Chain of 3 nodes: exactly 2 gradient prompts.
        assert_eq!(events.len(), 2);
        assert_eq!(backward_engine.request_count(), 2);
        let prompt_var = g.get(prompt).unwrap();
        assert_eq!(prompt_var.gradients.len(), 1);
        assert_eq!(prompt_var.gradients[0].feedback, "Be more specific.");
        assert_eq!(prompt_var.gradients[0].source, out.response);
        // The frozen question received nothing.
        assert!(g.get(q).unwrap().gradients.is_empty());
    }

    #[test]
    fn diamond_backward_matches_hand_enumeration() {
        // p feeds r1 and r2; both feed the loss. Hand enumeration:
        // visit loss -> gradients to r1, r2; visit r1 -> gradient to p;
        // visit r2 -> gradient to p. p ends with exactly 2 gradients and
        // the events are ordered loss->r1, loss->r2, r1->p, r2->p.
        let reg = registry();
        let history = PastIterations::new();
        let engine = echo_engine("tighten the wording");
        let mut g = Graph::new();
        let p = g.variable("the prompt", "system prompt", true).unwrap();
        let r1 = g.derived("resp one", "first response", true, &[p], None).unwrap();
        let r2 = g.derived("resp two", "second response", true, &[p], None).unwrap();
        let loss = g
            .derived("both responses are weak", "textual feedback", false, &[r1, r2], None)
            .unwrap();

        let events = g.backward(loss, &engine, &options(&reg, &history)).unwrap();
        let pairs: Vec<(VariableId, VariableId)> =
            events.iter().map(|e| (e.source, e.variable)).collect();
        assert_eq!(pairs, vec![(loss, r1), (loss, r2), (r1, p), (r2, p)]);
        assert_eq!(g.get(p).unwrap().gradients.len(), 2);
        assert_eq!(g.get(r1).unwrap().gradients.len(), 1);
        assert_eq!(g.get(r2).unwrap().gradients.len(), 1);
    }

    #[test]
    fn frozen_prompt_gets_no_gradients() {
        let reg = registry();
        let history = PastIterations::new();
        let engine = echo_engine("feedback");
        let mut g = Graph::new();
        let p = g.variable("prompt", "system prompt", false).unwrap();
        let r = g.derived("resp", "response", true, &[p], None).unwrap();
        let loss = g.derived("weak", "feedback", false, &[r], None).unwrap();
        g.backward(loss, &engine, &options(&reg, &history)).unwrap();
        assert!(g.get(p).unwrap().gradients.is_empty());
        assert_eq!(g.get(r).unwrap().gradients.len(), 1);
    }

    #[test]
    fn backward_unknown_loss_errors() {
        let mut g = Graph::new();
        let reg = registry();
        let history = PastIterations::new();
        let engine = echo_engine("x");
        let err = g
            .backward(VariableId::from_raw(5), &engine, &options(&reg, &history))
            .unwrap_err();
        assert!(matches!(err, Error::UnknownVariable(_)));
    }

    #[test]
    fn zero_grad_clears_and_is_idempotent() {
        let reg = registry();
        let history = PastIterations::new();
        let engine = echo_engine("fb");
        let mut g = Graph::new();
        let p = g.variable("prompt", "system prompt", true).unwrap();
        let loss = g.derived("bad", "feedback", false, &[p], None).unwrap();
        g.backward(loss, &engine, &options(&reg, &history)).unwrap();
        assert_eq!(g.get(p).unwrap().gradients.len(), 1);
        g.zero_grad(&[p]).unwrap();
        assert!(g.get(p).unwrap().gradients.is_empty());
        g.zero_grad(&[p]).unwrap();
        assert!(g.get(p).unwrap().gradients.is_empty());
        // Fresh variable: no-op.
        let fresh = g.variable("v", "r", true).unwrap();
        g.zero_grad(&[fresh]).unwrap();
        assert!(g.get(fresh).unwrap().gradients.is_empty());
    }

    #[test]
    fn replaying_script_gives_identical_gradients() {
        let reg = registry();
        let history = PastIterations::new();
        let run = || {
            let engine = echo_engine("fixed feedback");
            let mut g = Graph::new();
            let p = g.variable("prompt", "system prompt", true).unwrap();
            let r = g.derived("resp", "response", true, &[p], None).unwrap();
            let loss = g.derived("bad", "feedback", false, &[r], None).unwrap();
            g.backward(loss, &engine, &options(&reg, &history)).unwrap();
            g.get(p).unwrap().gradients.iter().map(|t| t.feedback.clone()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn topological_order_succeeds_after_forward_calls() {
        let mut g = Graph::new();
        let engine = echo_engine("r");
        let p = g.variable("p", "prompt", true).unwrap();
        let q = g.variable("q", "question", false).unwrap();
        g.forward_call(&engine, p, Some(q), SamplingParams::default()).unwrap();
        g.forward_call(&engine, p, Some(q), SamplingParams::default()).unwrap();
        let order = g.topological_order().unwrap();
        assert_eq!(order.len(), 4);
        assert!(order.iter().position(|&i| i == p).unwrap() < 2);
    }

    #[test]
    fn snapshot_lists_nodes_with_predecessors() {
        let mut g = Graph::new();
        let p = g.variable("p", "prompt", true).unwrap();
        let r = g.derived("r", "response", true, &[p], None).unwrap();
        let snap = g.snapshot_json();
        let nodes = snap["nodes"].as_array().unwrap();
        assert_eq!(nodes.len(), 2);
        assert_eq!(nodes[1]["predecessors"][0], p.raw());
        assert_eq!(nodes[1]["id"], r.raw());
    }
}
