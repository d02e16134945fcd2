//! Frozen prompt-template registry.
//!
//! Every prompt this crate ever sends is assembled from the templates in
//! `templates/`, one plain-text file per template, pinned by
//! `templates/manifest.sha256`. The same files are embedded into the binary
//! so the registry works without the directory; [`TemplateRegistry::from_dir`]
//! loads from disk and verifies the manifest.
//!
//! Rendering is literal substitution: `{name}` is replaced for the declared
//! placeholders of the template, everything else (including brace groups
//! that are not placeholders) passes through untouched. No escaping, no
//! trimming.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A named template body with its declared placeholders.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub placeholders: Vec<String>,
}

impl PromptTemplate {
    /// Substitute every declared placeholder. Fails naming the first
    /// placeholder that has no binding. Bindings for names the template
    /// does not declare are ignored.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String> {
        for name in &self.placeholders {
            if !bindings.iter().any(|(k, _)| k == name) {
                return Err(Error::Render {
                    template: self.name.clone(),
                    placeholder: name.clone(),
                });
            }
        }
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) => {
                    let name = &after[..close];
                    if self.placeholders.iter().any(|p| p == name) {
                        let value = bindings
                            .iter()
                            .find(|(k, _)| *k == name)
                            .map(|(_, v)| *v)
                            .expect("checked above");
                        out.push_str(value);
                    } else {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Template names, used as registry keys and file stems.
pub mod names {
    pub const GLOSSARY: &str = "glossary";
    pub const OPTIMIZER_SYSTEM_TGD: &str = "optimizer_system_tgd";
    pub const OPTIMIZER_SYSTEM_REVOLVE: &str = "optimizer_system_revolve";
    pub const OPTIMIZER_SYSTEM_VARIANT: &str = "optimizer_system_variant";
    pub const TGD_PREFIX_TGD: &str = "tgd_prefix_tgd";
    pub const TGD_PREFIX_REVOLVE: &str = "tgd_prefix_revolve";
    pub const TGD_PREFIX_VARIANT: &str = "tgd_prefix_variant";
    pub const GRADIENT_TGD: &str = "gradient_tgd";
    pub const GRADIENT_REVOLVE: &str = "gradient_revolve";
    pub const GRADIENT_VARIANT: &str = "gradient_variant";
    pub const CONVERSATION: &str = "conversation";
    pub const BACKWARD_SYSTEM: &str = "backward_system";
    pub const MOMENTUM_SECTION: &str = "momentum_section";
    pub const MOMENTUM_SURGE: &str = "momentum_surge";
    pub const REASK: &str = "reask";
    pub const EVAL_SYSTEM_TRAINING: &str = "eval_system_training";
    pub const EVAL_SYSTEM_SOLUTION: &str = "eval_system_solution";
    pub const EVAL_SYSTEM_CODE: &str = "eval_system_code";
    pub const EVAL_QUERY_CODE: &str = "eval_query_code";
    pub const QUERY_SOLUTION: &str = "query_solution";
    pub const INITIAL_PROMPT_REASONING: &str = "initial_prompt_reasoning";
    pub const CODEGEN_SYSTEM: &str = "codegen_system";
    pub const CODEGEN_QUERY: &str = "codegen_query";
}

/// (name, embedded file contents, declared placeholders)
const BUILTIN: &[(&str, &str, &[&str])] = &[
    (names::GLOSSARY, include_str!("../templates/glossary.txt"), &[]),
    (
        names::OPTIMIZER_SYSTEM_TGD,
        include_str!("../templates/optimizer_system_tgd.txt"),
        &["new_variable_start_tag", "new_variable_end_tag", "GLOSSARY_TEXT"],
    ),
    (
        names::OPTIMIZER_SYSTEM_REVOLVE,
        include_str!("../templates/optimizer_system_revolve.txt"),
        &["new_variable_start_tag", "new_variable_end_tag", "GLOSSARY_TEXT"],
    ),
    (
        names::OPTIMIZER_SYSTEM_VARIANT,
        include_str!("../templates/optimizer_system_variant.txt"),
        &["new_variable_start_tag", "new_variable_end_tag", "GLOSSARY_TEXT"],
    ),
    (
        names::TGD_PREFIX_TGD,
        include_str!("../templates/tgd_prefix_tgd.txt"),
        &["variable_desc", "variable_short", "variable_grad"],
    ),
    (
        names::TGD_PREFIX_REVOLVE,
        include_str!("../templates/tgd_prefix_revolve.txt"),
        &["variable_desc", "variable_short", "variable_grad", "past_values"],
    ),
    (
        names::TGD_PREFIX_VARIANT,
        include_str!("../templates/tgd_prefix_variant.txt"),
        &["variable_desc", "variable_short", "variable_grad"],
    ),
    (
        names::GRADIENT_TGD,
        include_str!("../templates/gradient_tgd.txt"),
        &["context", "response_desc", "variable_desc", "feedback"],
    ),
    (
        names::GRADIENT_REVOLVE,
        include_str!("../templates/gradient_revolve.txt"),
        &["context", "response_desc", "variable_desc", "feedback", "past_values"],
    ),
    (
        names::GRADIENT_VARIANT,
        include_str!("../templates/gradient_variant.txt"),
        &["context", "response_desc", "variable_desc", "feedback"],
    ),
    (
        names::CONVERSATION,
        include_str!("../templates/conversation.txt"),
        &["system_text", "input_text", "output_text"],
    ),
    (
        names::BACKWARD_SYSTEM,
        include_str!("../templates/backward_system.txt"),
        &["GLOSSARY_TEXT"],
    ),
    (
        names::MOMENTUM_SECTION,
        include_str!("../templates/momentum_section.txt"),
        &["past_feedbacks"],
    ),
    (names::MOMENTUM_SURGE, include_str!("../templates/momentum_surge.txt"), &[]),
    (
        names::REASK,
        include_str!("../templates/reask.txt"),
        &["new_variable_start_tag", "new_variable_end_tag"],
    ),
    (
        names::EVAL_SYSTEM_TRAINING,
        include_str!("../templates/eval_system_training.txt"),
        &[],
    ),
    (
        names::EVAL_SYSTEM_SOLUTION,
        include_str!("../templates/eval_system_solution.txt"),
        &[],
    ),
    (names::EVAL_SYSTEM_CODE, include_str!("../templates/eval_system_code.txt"), &[]),
    (
        names::EVAL_QUERY_CODE,
        include_str!("../templates/eval_query_code.txt"),
        &["statement", "code", "test_report"],
    ),
    (names::QUERY_SOLUTION, include_str!("../templates/query_solution.txt"), &["question"]),
    (
        names::INITIAL_PROMPT_REASONING,
        include_str!("../templates/initial_prompt_reasoning.txt"),
        &[],
    ),
    (names::CODEGEN_SYSTEM, include_str!("../templates/codegen_system.txt"), &[]),
    (
        names::CODEGEN_QUERY,
        include_str!("../templates/codegen_query.txt"),
        &["statement", "signature"],
    ),
];

/// The embedded checksum manifest (`sha256sum` format over the file bytes).
const MANIFEST: &str = include_str!("../templates/manifest.sha256");

/// Immutable set of loaded templates.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

/// A template body is the file contents without the final newline.
fn body_from_file(contents: &str) -> String {
    contents.strip_suffix('\n').unwrap_or(contents).to_string()
}

fn manifest_entries() -> BTreeMap<String, String> {
    MANIFEST
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            let digest = parts.next()?;
            let file = parts.next()?;
            Some((file.to_string(), digest.to_string()))
        })
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl TemplateRegistry {
    /// Registry built from the templates embedded at compile time,
    /// verified against the embedded manifest.
    pub fn builtin() -> Result<Self> {
        let manifest = manifest_entries();
        let mut templates = BTreeMap::new();
        for (name, contents, placeholders) in BUILTIN {
            let file = format!("{name}.txt");
            let expected = manifest
                .get(&file)
                .ok_or_else(|| Error::Registry(format!("{file} missing from manifest")))?;
            let actual = sha256_hex(contents.as_bytes());
            if &actual != expected {
                return Err(Error::Registry(format!(
                    "checksum mismatch for {file}: manifest {expected}, embedded {actual}"
                )));
            }
            templates.insert(
                name.to_string(),
                PromptTemplate {
                    name: name.to_string(),
                    body: body_from_file(contents),
                    placeholders: placeholders.iter().map(|s| s.to_string()).collect(),
                },
            );
        }
        Ok(Self { templates })
    }

    /// Load the registry from a directory of template files, verifying each
    /// file against `manifest.sha256` in that directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let manifest_text = fs::read_to_string(dir.join("manifest.sha256"))
            .map_err(|e| Error::Registry(format!("cannot read manifest in {dir:?}: {e}")))?;
        let manifest: BTreeMap<String, String> = manifest_text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| {
                let mut parts = l.split_whitespace();
                let digest = parts.next()?;
                let file = parts.next()?;
                Some((file.to_string(), digest.to_string()))
            })
            .collect();

        let mut templates = BTreeMap::new();
        for (name, _, placeholders) in BUILTIN {
            let file = format!("{name}.txt");
            let path = dir.join(&file);
            let contents = fs::read_to_string(&path)
                .map_err(|e| Error::Registry(format!("cannot read {path:?}: {e}")))?;
            let expected = manifest
                .get(&file)
                .ok_or_else(|| Error::Registry(format!("{file} missing from manifest")))?;
            let actual = sha256_hex(contents.as_bytes());
            if &actual != expected {
                return Err(Error::Registry(format!(
                    "checksum mismatch for {file}: manifest {expected}, file {actual}"
                )));
            }
            templates.insert(
                name.to_string(),
                PromptTemplate {
                    name: name.to_string(),
                    body: body_from_file(&contents),
                    placeholders: placeholders.iter().map(|s| s.to_string()).collect(),
                },
            );
        }
        Ok(Self { templates })
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate> {
        self.templates
            .get(name)
            .ok_or_else(|| Error::Registry(format!("no template named '{name}'")))
    }

    /// Render a template by name.
    pub fn render(&self, name: &str, bindings: &[(&str, &str)]) -> Result<String> {
        self.get(name)?.render(bindings)
    }

    /// The glossary body, appended to optimizer and backward system prompts.
    pub fn glossary(&self) -> Result<&str> {
        Ok(self.get(names::GLOSSARY)?.body.as_str())
    }
}
