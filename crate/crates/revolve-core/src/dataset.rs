//! Dataset loading, splits, and seeded sampling.
//!
//! Canonical format is JSONL with `{id, question, answer}` per line; code
//! problems add `statement`, `signature` and `tests`. Splits slice the file
//! in order (train, then val, then test); an opt-in seeded shuffle precedes
//! slicing. Everything is a pure function of (file bytes, spec, seed).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default, flatten)]
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub source: PathBuf,
    pub shuffle: bool,
}

impl SplitSpec {
    /// Parse "train:val:test" counts.
    pub fn parse_counts(s: &str) -> Result<(usize, usize, usize)> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("split spec '{s}' is not train:val:test")));
        }
        let parse = |p: &str| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad split count '{p}' in '{s}'")))
        };
        Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!(
        "cannot read dataset {path:?}: {e}"
    )))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(line)
            .map_err(|e| Error::Dataset { line: Some(i + 1), message: e.to_string() })?;
        out.push(item);
    }
    Ok(out)
}

fn check_unique_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Dataset { line: None, message: format!("duplicate id '{id}'") });
        }
    }
    Ok(())
}

/// Load a whole example file without splitting.
pub fn load_examples(path: &Path) -> Result<Vec<Example>> {
    let records: Vec<Example> = read_jsonl(path)?;
    check_unique_ids(records.iter().map(|r| r.id.as_str()))?;
    Ok(records)
}

/// Load and split a dataset: records taken in file order into train, then
/// val, then test (seeded shuffle first when the spec says so).
pub fn load_split(
    spec: &SplitSpec,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>)> {
    let mut records: Vec<Example> = read_jsonl(&spec.source)?;
    for (i, r) in records.iter().enumerate() {
        if r.answer.is_empty() {
            return Err(Error::Dataset {
                line: Some(i + 1),
                message: format!("example '{}' has an empty answer", r.id),
            });
        }
    }
    check_unique_ids(records.iter().map(|r| r.id.as_str()))?;
    let needed = spec.train + spec.val + spec.test;
    if records.len() < needed {
        return Err(Error::Dataset {
            line: None,
            message: format!(
                "{:?} has {} records, split {}:{}:{} needs {needed} ({} short)",
                spec.source,
                records.len(),
                spec.train,
                spec.val,
                spec.test,
                needed - records.len()
            ),
        });
    }
    if spec.shuffle {
        let mut rng = SplitMix64::new(seed);
        rng.shuffle(&mut records);
    }
    let val_split = records.split_off(spec.train);
    let mut val = val_split;
    let test_split = val.split_off(spec.val);
    let mut test = test_split;
    test.truncate(spec.test);
    Ok((records, val, test))
}

/// k independent uniform draws with replacement.
pub fn sample_batch(pool: &[Example], k: usize, rng: &mut SplitMix64) -> Result<Vec<Example>> {
    if pool.is_empty() {
        return Err(Error::validation("cannot sample from an empty pool"));
    }
    if k == 0 {
        return Err(Error::validation("batch size must be at least 1"));
    }
    Ok((0..k).map(|_| pool[rng.below(pool.len())].clone()).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodeProblem {
    pub id: String,
    pub statement: String,
    pub signature: String,
    #[serde(rename = "tests")]
    pub local_tests: Vec<String>,
}

/// Loose check that the signature is a single function header.
fn signature_ok(signature: &str) -> bool {
    let s = signature.trim();
    s.starts_with("def ") && s.contains('(') && s.contains(')') && !s.contains('\n')
}

pub fn load_code_problems(path: &Path) -> Result<Vec<CodeProblem>> {
    let problems: Vec<CodeProblem> = read_jsonl(path)?;
    check_unique_ids(problems.iter().map(|p| p.id.as_str()))?;
    for (i, p) in problems.iter().enumerate() {
        if p.local_tests.is_empty() {
            return Err(Error::Dataset {
                line: Some(i + 1),
                message: format!("problem '{}' has no local tests", p.id),
            });
        }
        if !signature_ok(&p.signature) {
            return Err(Error::Dataset {
                line: Some(i + 1),
                message: format!("problem '{}' signature is not a function header", p.id),
            });
        }
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_examples(n: usize) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..n {
            writeln!(f, r#"{{"id": "ex-{i}", "question": "q{i}", "answer": "{i}"}}"#).unwrap();
        }
        f
    }

    fn spec(path: &Path, train: usize, val: usize, test: usize) -> SplitSpec {
        SplitSpec { train, val, test, source: path.to_path_buf(), shuffle: false }
    }

    #[test]
    fn split_sizes_and_disjoint_ids() {
        let f = write_examples(250);
        let (train, val, test) = load_split(&spec(f.path(), 50, 100, 100), 0).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (50, 100, 100));
        let mut ids = HashSet::new();
        for e in train.iter().chain(&val).chain(&test) {
            assert!(ids.insert(e.id.clone()), "id {} appears twice", e.id);
        }
    }

    #[test]
    fn gsm8k_style_partition() {
        let f = write_examples(1899);
        let (train, val, test) = load_split(&spec(f.path(), 200, 300, 1399), 0).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (200, 300, 1399));
    }

    #[test]
    fn short_file_names_shortfall() {
        let f = write_examples(10);
        let err = load_split(&spec(f.path(), 50, 100, 100), 0).unwrap_err();
        match err {
            Error::Dataset { message, .. } => assert!(message.contains("240 short")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_order_slicing_is_default() {
        let f = write_examples(10);
        let (train, _, _) = load_split(&spec(f.path(), 3, 3, 3), 99).unwrap();
        assert_eq!(train.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["ex-0", "ex-1", "ex-2"]);
    }

    #[test]
    fn shuffle_is_seeded() {
        let f = write_examples(30);
        let mut s = spec(f.path(), 10, 10, 10);
        s.shuffle = true;
        let a = load_split(&s, 7).unwrap();
        let b = load_split(&s, 7).unwrap();
        let c = load_split(&s, 8).unwrap();
        let ids = |v: &[Example]| v.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.0), ids(&b.0));
        assert_ne!(ids(&a.0), ids(&c.0));
    }

    #[test]
    fn sampling_with_replacement() {
        let f = write_examples(1);
        let (train, _, _) = load_split(&spec(f.path(), 1, 0, 0), 0).unwrap();
        let mut rng = SplitMix64::new(5);
        let batch = sample_batch(&train, 3, &mut rng).unwrap();
        assert_eq!(batch.len(), 3);
        assert!(batch.iter().all(|e| e.id == "ex-0"));
    }

    #[test]
    fn sampling_is_seeded() {
        let f = write_examples(20);
        let (train, _, _) = load_split(&spec(f.path(), 20, 0, 0), 0).unwrap();
        let batch = |seed| {
            let mut rng = SplitMix64::new(seed);
            sample_batch(&train, 3, &mut rng)
                .unwrap()
                .iter()
                .map(|e| e.id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(batch(1), batch(1));
    }

    #[test]
    fn empty_pool_rejected() {
        let mut rng = SplitMix64::new(0);
        assert!(sample_batch(&[], 3, &mut rng).is_err());
    }

    #[test]
    fn code_problems_parse_and_validate() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"id": "p1", "statement": "do it", "signature": "def f(x: int) -> int:", "tests": ["assert f(1) == 2"]}}"#
        )
        .unwrap();
        let problems = load_code_problems(f.path()).unwrap();
        assert_eq!(problems.len(), 1);
        assert_eq!(problems[0].local_tests.len(), 1);
    }

    #[test]
    fn code_problem_errors() {
        // Missing tests field.
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id": "p1", "statement": "s", "signature": "def f():"}}"#).unwrap();
        match load_code_problems(f.path()).unwrap_err() {
            Error::Dataset { line, .. } => assert_eq!(line, Some(1)),
            other => panic!("unexpected {other:?}"),
        }
        // Duplicate id.
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for _ in 0..2 {
            writeln!(
                f,
                r#"{{"id": "p1", "statement": "s", "signature": "def f():", "tests": ["assert f() == 1"]}}"#
            )
            .unwrap();
        }
        assert!(load_code_problems(f.path()).is_err());
    }

    #[test]
    fn duplicate_example_id_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for _ in 0..2 {
            writeln!(f, r#"{{"id": "same", "question": "q", "answer": "1"}}"#).unwrap();
        }
        assert!(load_split(&spec(f.path(), 1, 1, 0), 0).is_err());
    }
}
