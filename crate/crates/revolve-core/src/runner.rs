//! Run orchestration: configure engines, execute a task, write the RunLog,
//! summary and graph snapshot, and replay existing logs byte-for-byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{EngineSection, RunConfig, TaskKind};
use crate::dataset::{load_code_problems, load_examples, load_split, SplitSpec};
use crate::engine::{
    CacheOnlyEngine, CachingEngine, DiskCache, Engine, HttpEngine, HttpEngineConfig,
    ScriptedEngine,
};
use crate::error::{Error, Result};
use crate::exec::{submit_external, Executor};
use crate::harness::{
    optimize_code, optimize_prompt, optimize_solution, CodeOptSettings, Harness,
    PromptOptSettings, SolutionOptSettings,
};
use crate::metrics::completion_rate;
use crate::report::mean_sd;
use crate::runlog::{config_record, read_log, RunLogWriter, RECORD_CONFIG, RECORD_FINAL};
use crate::templates::{names, TemplateRegistry};

pub const CACHE_DIR_ENV: &str = "REVOLVE_CACHE_DIR";

/// Overrides applied on top of the parsed config (CLI flags and replay).
#[derive(Debug, Default, Clone)]
pub struct RunOverrides {
    pub dataset: Option<PathBuf>,
    pub split_spec: Option<String>,
    pub output_dir: Option<PathBuf>,
    /// Replay semantics: serve every request from the warm cache when the
    /// config enables caching; never touch the network.
    pub replay: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: String,
    pub task: String,
    pub metric: f64,
    pub runlog_path: PathBuf,
    pub summary_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayOutcome {
    Match,
    Mismatch { line: usize, record: String },
}

/// Deterministic run identifier: digest of the verbatim config text and the
/// seed.
pub fn run_id_for(config_text: &str, seed: u64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    hasher.update(seed.to_le_bytes());
    hex::encode(hasher.finalize())[..16].to_string()
}

fn resolve_cache_dir(config: &RunConfig) -> PathBuf {
    if let Some(dir) = &config.cache_dir {
        return dir.clone();
    }
    if let Ok(dir) = std::env::var(CACHE_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    config.output_dir.join("cache")
}

fn build_engine(
    section: &EngineSection,
    cache: Option<&DiskCache>,
    replay: bool,
) -> Result<Arc<dyn Engine>> {
    if replay {
        return match cache {
            Some(cache) => {
                Ok(Arc::new(CacheOnlyEngine::new(section.model_id.clone(), cache.clone())))
            }
            None => match section.backend.as_str() {
                "scripted" => Ok(Arc::new(build_scripted(section)?)),
                _ => Err(Error::Environment(
                    "cannot replay an HTTP-backed run without a warm cache".into(),
                )),
            },
        };
    }
    let inner: Box<dyn Engine> = match section.backend.as_str() {
        "scripted" => Box::new(build_scripted(section)?),
        "http" => {
            let mut http_config =
                HttpEngineConfig::from_env(section.model_id.clone(), section.base_url.clone())?;
            if let Some(floor) = section.temperature_floor {
                http_config.temperature_floor = Some(floor);
            }
            Box::new(HttpEngine::new(http_config)?)
        }
        other => return Err(Error::Config(format!("unknown engine backend '{other}'"))),
    };
    Ok(match cache {
        Some(cache) => Arc::new(CachingEngine::new(inner, cache.clone())),
        None => Arc::from(inner),
    })
}

fn build_scripted(section: &EngineSection) -> Result<ScriptedEngine> {
    let path = section
        .script
        .as_ref()
        .ok_or_else(|| Error::Config("scripted backend needs a script path".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read script {path:?}: {e}")))?;
    ScriptedEngine::from_json(section.model_id.clone(), &text)
}

fn check_dataset_exists(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Config(format!("dataset {path:?} does not exist")));
    }
    Ok(())
}

/// Execute a run from the verbatim config text. Writes
/// `output_dir/{runlog.jsonl, summary.json, graph.json}`; a failing run
/// still ends its log with an ERROR record.
pub fn execute_run(config_text: &str, overrides: &RunOverrides) -> Result<RunSummary> {
    let mut config = RunConfig::parse(config_text)?;
    let mode = config.run_mode()?;

    // Cache location depends on the original output dir; the override only
    // moves the new log (replay writes its re-execution elsewhere).
    let cache = if config.cache {
        let dir = resolve_cache_dir(&config);
        Some(if overrides.replay { DiskCache::open_existing(dir)? } else { DiskCache::new(dir)? })
    } else {
        None
    };
    if let Some(dir) = &overrides.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(dataset) = &overrides.dataset {
        if let Some(section) = config.prompt_task.as_mut() {
            section.dataset = dataset.clone();
        }
        if let Some(section) = config.solution_task.as_mut() {
            section.dataset = dataset.clone();
        }
        if let Some(section) = config.code_task.as_mut() {
            section.dataset = dataset.clone();
        }
    }
    if let Some(split) = &overrides.split_spec {
        if let Some(section) = config.prompt_task.as_mut() {
            section.split = split.clone();
        }
    }

    let registry = match &config.templates_dir {
        Some(dir) => TemplateRegistry::from_dir(dir)?,
        None => TemplateRegistry::builtin()?,
    };

    let base = build_engine(&config.engines.base, cache.as_ref(), overrides.replay)?;
    let optimizer = match &config.engines.optimizer {
        Some(section) => build_engine(section, cache.as_ref(), overrides.replay)?,
        None => base.clone(),
    };

    let harness = Harness {
        base: base.as_ref(),
        optimizer: optimizer.as_ref(),
        registry: &registry,
        mode,
        optimizer_config: config.optimizer.to_config(mode.optimizer_flavor()),
        sampling: config.sampling_params(),
    };

    fs::create_dir_all(&config.output_dir)?;
    let runlog_path = config.output_dir.join("runlog.jsonl");
    let run_id = run_id_for(config_text, config.seed);
    let mut log = RunLogWriter::create(&runlog_path, run_id.clone(), config.seed, config.profile)?;
    log.write(
        RECORD_CONFIG,
        json!({
            "task": config.task.as_str(),
            "mode": mode.to_string(),
            "config_text": config_text,
        }),
    )?;

    let result = run_task(&config, &harness, &mut log);
    let (metric, data, graph_snapshot) = match result {
        Ok(parts) => parts,
        Err(e) => {
            let _ = log.error(&e.to_string());
            return Err(e);
        }
    };

    let mut final_data = json!({ "task": config.task.as_str(), "metric": metric });
    merge(&mut final_data, data);
    log.write(RECORD_FINAL, final_data.clone())?;

    let summary_path = config.output_dir.join("summary.json");
    let summary = json!({
        "run_id": run_id,
        "seed": config.seed,
        "mode": mode.to_string(),
        "final": final_data,
    });
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    fs::write(
        config.output_dir.join("graph.json"),
        serde_json::to_string_pretty(&graph_snapshot)?,
    )?;

    Ok(RunSummary {
        run_id,
        task: config.task.as_str().to_string(),
        metric,
        runlog_path,
        summary_path,
    })
}

fn merge(target: &mut Value, extra: Value) {
    if let (Value::Object(t), Value::Object(e)) = (target, extra) {
        for (k, v) in e {
            t.insert(k, v);
        }
    }
}

fn run_task(
    config: &RunConfig,
    harness: &Harness<'_>,
    log: &mut RunLogWriter,
) -> Result<(f64, Value, Value)> {
    match config.task {
        TaskKind::Prompt => run_prompt_task(config, harness, log),
        TaskKind::Solution => run_solution_task(config, harness, log),
        TaskKind::Code => run_code_task(config, harness, log),
    }
}

fn run_prompt_task(
    config: &RunConfig,
    harness: &Harness<'_>,
    log: &mut RunLogWriter,
) -> Result<(f64, Value, Value)> {
    let section = config.prompt_task.as_ref().expect("validated by parse");
    check_dataset_exists(&section.dataset)?;
    let (train_n, val_n, test_n) = SplitSpec::parse_counts(&section.split)?;
    let spec = SplitSpec {
        train: train_n,
        val: val_n,
        test: test_n,
        source: section.dataset.clone(),
        shuffle: section.shuffle,
    };
    let (train, val, test) = load_split(&spec, config.seed)?;
    let initial_prompt = match &section.initial_prompt {
        Some(p) => p.clone(),
        None => harness.registry.get(names::INITIAL_PROMPT_REASONING)?.body.clone(),
    };
    let settings = PromptOptSettings {
        batch_size: section.batch_size,
        iterations: section.iterations,
        initial_prompt,
        metric: section.metric_kind()?,
        seed: config.seed,
        accept_equal: section.accept_equal,
    };
    let outcome = optimize_prompt(harness, &train, &val, &test, &settings, log)?;
    let data = json!({
        "best_prompt": outcome.best_prompt,
        "val_accuracy": outcome.val_accuracy,
        "accepted_iterations": outcome.accepted_iterations,
    });
    Ok((outcome.test_accuracy, data, outcome.graph_snapshot))
}

fn run_solution_task(
    config: &RunConfig,
    harness: &Harness<'_>,
    log: &mut RunLogWriter,
) -> Result<(f64, Value, Value)> {
    let section = config.solution_task.as_ref().expect("validated by parse");
    check_dataset_exists(&section.dataset)?;
    let mut examples = load_examples(&section.dataset)?;
    if let Some(limit) = section.limit {
        examples.truncate(limit);
    }
    if examples.is_empty() {
        return Err(Error::Config("solution dataset is empty".into()));
    }
    let settings = SolutionOptSettings { iterations: section.iterations };
    let mut correct = 0usize;
    let mut snapshot = Value::Null;
    let mut per_example = Vec::new();
    for example in &examples {
        let outcome = optimize_solution(harness, example, &settings, log)?;
        if outcome.metric.value == 1.0 {
            correct += 1;
        }
        per_example.push(json!({
            "example_id": example.id,
            "final_answer": outcome.metric.extracted,
            "correct": outcome.metric.value == 1.0,
        }));
        snapshot = outcome.graph_snapshot;
    }
    let accuracy = correct as f64 / examples.len() as f64;
    Ok((accuracy, json!({ "examples": per_example, "n": examples.len() }), snapshot))
}

fn run_code_task(
    config: &RunConfig,
    harness: &Harness<'_>,
    log: &mut RunLogWriter,
) -> Result<(f64, Value, Value)> {
    let section = config.code_task.as_ref().expect("validated by parse");
    check_dataset_exists(&section.dataset)?;
    let problems = load_code_problems(&section.dataset)?;
    if problems.is_empty() {
        return Err(Error::Config("code dataset is empty".into()));
    }
    let executor = Executor {
        per_test_timeout: Duration::from_secs(section.test_timeout_secs),
        ..Executor::default()
    };
    executor.check_available()?;

    let settings = CodeOptSettings { iterations: section.iterations };
    let mut per_seed_rates = Vec::new();
    let mut per_seed = Vec::new();
    let mut snapshot = Value::Null;
    for &seed in &section.seeds {
        let mut passed = 0usize;
        let mut problem_outcomes = Vec::new();
        for problem in &problems {
            let outcome = optimize_code(harness, &executor, problem, &settings, log)?;
            let mut submitted = Value::Null;
            if outcome.passed_local {
                passed += 1;
                if let Some(submitter) = &section.submitter {
                    let dir = std::env::temp_dir().join(format!(
                        "revolve-submit-{}-{}",
                        std::process::id(),
                        problem.id
                    ));
                    fs::create_dir_all(&dir)?;
                    let source = dir.join("solution.py");
                    fs::write(&source, &outcome.final_code)?;
                    submitted = json!(submit_external(submitter, &problem.id, &source)?);
                    let _ = fs::remove_dir_all(&dir);
                }
            }
            problem_outcomes.push(json!({
                "problem_id": problem.id,
                "passed_local": outcome.passed_local,
                "optimizer_steps": outcome.optimizer_steps,
                "submitted": submitted,
            }));
            snapshot = outcome.graph_snapshot;
        }
        let rate = completion_rate(passed, problems.len())?;
        per_seed_rates.push(rate);
        per_seed.push(json!({ "seed": seed, "completion_rate": rate, "problems": problem_outcomes }));
    }
    let (mean, sd) = mean_sd(&per_seed_rates)?;
    let data = json!({
        "per_seed": per_seed,
        "completion_rate_sd": sd,
        "n_problems": problems.len(),
    });
    Ok((mean, data, snapshot))
}

/// Re-execute the run recorded in `log_path` and byte-compare the new log
/// against the old one. Requires a warm cache when the run used caching; a
/// scripted cacheless run re-executes its script.
pub fn execute_replay(log_path: &Path) -> Result<ReplayOutcome> {
    let old_text = fs::read_to_string(log_path)
        .map_err(|e| Error::Config(format!("cannot read run log {log_path:?}: {e}")))?;
    let records = read_log(log_path)?;
    let config_rec = config_record(&records)?;
    if config_rec["record"] != RECORD_CONFIG {
        return Err(Error::Config("run log does not start with CONFIG".into()));
    }
    let config_text = config_rec["data"]["config_text"]
        .as_str()
        .ok_or_else(|| Error::Config("CONFIG record carries no config_text".into()))?
        .to_string();
    let seed = config_rec["seed"].as_u64().unwrap_or(0);

    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let replay_dir = std::env::temp_dir().join(format!(
        "revolve-replay-{}-{}-{}",
        run_id_for(&config_text, seed),
        std::process::id(),
        nanos
    ));
    let overrides =
        RunOverrides { output_dir: Some(replay_dir.clone()), replay: true, ..Default::default() };
    let summary = execute_run(&config_text, &overrides);
    let outcome = summary.and_then(|s| {
        let new_text = fs::read_to_string(&s.runlog_path)?;
        Ok(compare_logs(&old_text, &new_text))
    });
    let _ = fs::remove_dir_all(&replay_dir);
    outcome
}

fn compare_logs(old_text: &str, new_text: &str) -> ReplayOutcome {
    let old_lines: Vec<&str> = old_text.lines().collect();
    let new_lines: Vec<&str> = new_text.lines().collect();
    for (i, (old, new)) in old_lines.iter().zip(new_lines.iter()).enumerate() {
        if old != new {
            let record = serde_json::from_str::<Value>(old)
                .ok()
                .and_then(|v| v["record"].as_str().map(|s| s.to_string()))
                .unwrap_or_else(|| "?".into());
            return ReplayOutcome::Mismatch { line: i + 1, record };
        }
    }
    if old_lines.len() != new_lines.len() {
        let line = old_lines.len().min(new_lines.len()) + 1;
        return ReplayOutcome::Mismatch { line, record: "missing or extra record".into() };
    }
    ReplayOutcome::Match
}
