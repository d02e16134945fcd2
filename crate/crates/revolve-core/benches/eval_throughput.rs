//! Split-evaluation throughput: data-parallel vs sequential scoring.
//!
//! The engine here is CPU-bound (repeated hashing standing in for local
//! inference work) so the comparison reflects scheduling, not network.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sha2::{Digest, Sha256};

use revolve_core::dataset::Example;
use revolve_core::engine::{Engine, EngineRequest, EngineResponse, SamplingParams};
use revolve_core::harness::{evaluate_split, evaluate_split_sequential};
use revolve_core::metrics::MetricKind;

/// Deterministic engine that burns CPU per request and answers with a
/// number derived from the question.
struct HashingEngine {
    rounds: usize,
}

impl Engine for HashingEngine {
    fn model_id(&self) -> &str {
        "hashing-bench"
    }

    fn generate(&self, request: &EngineRequest) -> revolve_core::Result<EngineResponse> {
        let mut digest = Sha256::digest(request.user_text.as_bytes());
        for _ in 0..self.rounds {
            digest = Sha256::digest(&digest);
        }
        Ok(EngineResponse {
            text: format!("Answer: {}", digest[0] as u32 % 10),
            cached: false,
            latency_ms: 0,
        })
    }
}

fn examples(n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| Example {
            id: format!("e{i}"),
            question: format!("question number {i}"),
            answer: "3".into(),
            metadata: Default::default(),
        })
        .collect()
}

fn bench_eval(c: &mut Criterion) {
    let engine = HashingEngine { rounds: 2000 };
    let params = SamplingParams::default();
    let mut group = c.benchmark_group("evaluate_split");
    for n in [32usize, 128] {
        let split = examples(n);
        group.bench_with_input(BenchmarkId::new("sequential", n), &split, |b, split| {
            b.iter(|| {
                evaluate_split_sequential(
                    &engine,
                    "count",
                    split,
                    params,
                    MetricKind::ExactMatchNumeric,
                )
                .unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("default", n), &split, |b, split| {
            b.iter(|| {
                evaluate_split(&engine, "count", split, params, MetricKind::ExactMatchNumeric)
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_eval);
criterion_main!(benches);
