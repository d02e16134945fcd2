//! Run configuration: one flat TOML file, serialized verbatim into the
//! RunLog header so a log always carries the exact recipe that produced it.

use std::path::PathBuf;

use serde::Deserialize;

use crate::engine::SamplingParams;
use crate::error::{Error, Result};
use crate::harness::RunMode;
use crate::metrics::MetricKind;
use crate::optim::{OptimizerConfig, OptimizerFlavor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Prompt,
    Solution,
    Code,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Prompt => "prompt",
            TaskKind::Solution => "solution",
            TaskKind::Code => "code",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub backend: String,
    pub model_id: String,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub temperature_floor: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnginesSection {
    pub base: EngineSection,
    #[serde(default)]
    pub optimizer: Option<EngineSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub momentum_window: usize,
    pub max_history: Option<usize>,
    pub parse_retries: u32,
    pub new_variable_start_tag: String,
    pub new_variable_end_tag: String,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            momentum_window: 12,
            max_history: None,
            parse_retries: 1,
            new_variable_start_tag: "<IMPROVED_VARIABLE>".into(),
            new_variable_end_tag: "</IMPROVED_VARIABLE>".into(),
        }
    }
}

impl OptimizerSection {
    pub fn to_config(&self, flavor: OptimizerFlavor) -> OptimizerConfig {
        OptimizerConfig {
            flavor,
            momentum_window: self.momentum_window,
            max_history: self.max_history,
            new_variable_tags: (
                self.new_variable_start_tag.clone(),
                self.new_variable_end_tag.clone(),
            ),
            parse_retries: self.parse_retries,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTaskSection {
    pub dataset: PathBuf,
    /// "train:val:test" counts.
    pub split: String,
    #[serde(default)]
    pub shuffle: bool,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_prompt_iterations")]
    pub iterations: u32,
    #[serde(default = "default_metric")]
    pub metric: String,
    #[serde(default)]
    pub initial_prompt: Option<String>,
    #[serde(default)]
    pub accept_equal: bool,
}

fn default_batch_size() -> usize {
    3
}
fn default_prompt_iterations() -> u32 {
    12
}
fn default_metric() -> String {
    "numeric".into()
}

impl PromptTaskSection {
    pub fn metric_kind(&self) -> Result<MetricKind> {
        match self.metric.as_str() {
            "numeric" => Ok(MetricKind::ExactMatchNumeric),
            "letter" => Ok(MetricKind::ExactMatchLetter),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionTaskSection {
    pub dataset: PathBuf,
    #[serde(default = "default_solution_iterations")]
    pub iterations: u32,
    /// Optional cap on how many examples to run (in file order).
    #[serde(default)]
    pub limit: Option<usize>,
}

fn default_solution_iterations() -> u32 {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeTaskSection {
    pub dataset: PathBuf,
    #[serde(default = "default_code_iterations")]
    pub iterations: u32,
    #[serde(default = "default_code_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub submitter: Option<PathBuf>,
    #[serde(default = "default_test_timeout_secs")]
    pub test_timeout_secs: u64,
}

fn default_code_iterations() -> u32 {
    5
}
fn default_code_seeds() -> Vec<u64> {
    vec![15, 17, 21, 55, 91]
}
fn default_test_timeout_secs() -> u64 {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub mode: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache: bool,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub profile: bool,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    pub engines: EnginesSection,
    #[serde(default)]
    pub sampling: Option<SamplingParams>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub prompt_task: Option<PromptTaskSection>,
    #[serde(default)]
    pub solution_task: Option<SolutionTaskSection>,
    #[serde(default)]
    pub code_task: Option<CodeTaskSection>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        config.run_mode()?;
        match config.task {
            TaskKind::Prompt if config.prompt_task.is_none() => {
                return Err(Error::Config("task = \"prompt\" needs a [prompt_task] section".into()))
            }
            TaskKind::Solution if config.solution_task.is_none() => {
                return Err(Error::Config(
                    "task = \"solution\" needs a [solution_task] section".into(),
                ))
            }
            TaskKind::Code if config.code_task.is_none() => {
                return Err(Error::Config("task = \"code\" needs a [code_task] section".into()))
            }
            _ => {}
        }
        Ok(config)
    }

    pub fn run_mode(&self) -> Result<RunMode> {
        RunMode::parse(&self.mode)
    }

    pub fn sampling_params(&self) -> SamplingParams {
        self.sampling.unwrap_or_default()
    }
}
