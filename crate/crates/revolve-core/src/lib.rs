//! Textual-differentiation optimization for LLM systems.
//!
//! Text variables (prompts, solutions, code) flow through a computation
//! graph; an evaluator model produces a natural-language loss; backward
//! propagates textual gradients; an optimizer model rewrites the variables.
//! Three optimizers ship — first-order TGD, momentum-TGD, and the
//! response-evolution optimizer that embeds the full trajectory of past
//! (variable, response, feedback) triples into its prompts — plus three
//! reproducible harnesses: prompt optimization with validation gating,
//! test-time solution optimization with majority voting, and code
//! optimization against local tests.
//!
//! Everything is replayable: engines are pluggable (live HTTP, scripted,
//! cached), runs are seeded, and run logs are deterministic JSONL.

pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod exec;
pub mod graph;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod prompts;
pub mod report;
pub mod rng;
pub mod runlog;
pub mod runner;
pub mod templates;

pub use error::{Error, Result};
