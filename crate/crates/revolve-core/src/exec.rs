//! Local execution of generated Python code against assertion tests.
//!
//! Each assertion runs in its own subprocess (isolated mode, temp working
//! directory, wall-clock budget, killed on timeout). For `assert f(...) ==
//! expected` assertions the runner evaluates both sides so the report can
//! say what the code actually produced.

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::error::{Error, Result};

/// Outcome of one assertion.
#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub assertion: String,
    pub passed: bool,
    pub observed: String,
    pub expected: String,
}

const RUNNER: &str = r#"
import json
import sys


def main():
    src_path, assertion = sys.argv[1], sys.argv[2]
    with open(src_path) as f:
        src = f.read()
    ns = {}
    try:
        exec(compile(src, "solution.py", "exec"), ns)
    except Exception as e:
        print(json.dumps({"passed": False, "observed": "ERROR: %r" % (e,), "expected": ""}))
        return
    stmt = assertion.strip()
    if stmt.startswith("assert "):
        stmt = stmt[len("assert "):]
    lhs, sep, rhs = stmt.rpartition("==")
    if sep:
        try:
            expected = eval(rhs, ns)
        except Exception as e:
            print(json.dumps({"passed": False, "observed": "ERROR: bad expected value %r" % (e,), "expected": rhs.strip()}))
            return
        try:
            observed = eval(lhs, ns)
        except Exception as e:
            print(json.dumps({"passed": False, "observed": "ERROR: %r" % (e,), "expected": repr(expected)}))
            return
        print(json.dumps({"passed": observed == expected, "observed": repr(observed), "expected": repr(expected)}))
    else:
        try:
            result = eval(stmt, ns)
            print(json.dumps({"passed": bool(result), "observed": repr(result), "expected": "truthy"}))
        except Exception as e:
            print(json.dumps({"passed": False, "observed": "ERROR: %r" % (e,), "expected": "truthy"}))


main()
"#;

#[derive(Deserialize)]
struct RunnerVerdict {
    passed: bool,
    observed: String,
    expected: String,
}

/// Expected value taken textually from the assertion, for timeout reports.
fn textual_expected(assertion: &str) -> String {
    assertion.rsplit_once("==").map(|(_, rhs)| rhs.trim().to_string()).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct Executor {
    pub python: String,
    pub per_test_timeout: Duration,
}

impl Default for Executor {
    fn default() -> Self {
        Self { python: "python3".into(), per_test_timeout: Duration::from_secs(10) }
    }
}

impl Executor {
    /// Verify the interpreter exists; an unavailable executor aborts the
    /// run with an environment error.
    pub fn check_available(&self) -> Result<()> {
        let ok = Command::new(&self.python)
            .arg("--version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        if ok {
            Ok(())
        } else {
            Err(Error::Environment(format!("python executor '{}' is unavailable", self.python)))
        }
    }

    /// Run every assertion against the code. A timed-out test is a failure
    /// with observed "TIMEOUT".
    pub fn run_tests(&self, code: &str, assertions: &[String]) -> Result<Vec<TestOutcome>> {
        let dir = tempfile::tempdir()?;
        let src_path = dir.path().join("solution.py");
        let runner_path = dir.path().join("runner.py");
        fs::write(&src_path, code)?;
        fs::write(&runner_path, RUNNER)?;

        let mut outcomes = Vec::with_capacity(assertions.len());
        for assertion in assertions {
            let mut child = Command::new(&self.python)
                .arg("-I")
                .arg(&runner_path)
                .arg(&src_path)
                .arg(assertion)
                .current_dir(dir.path())
                .stdout(Stdio::piped())
                .stderr(Stdio::null())
                .stdin(Stdio::null())
                .spawn()
                .map_err(|e| Error::Environment(format!("cannot spawn '{}': {e}", self.python)))?;

            let deadline = Instant::now() + self.per_test_timeout;
            let timed_out = loop {
                match child.try_wait()? {
                    Some(_) => break false,
                    None if Instant::now() >= deadline => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break true;
                    }
                    None => std::thread::sleep(Duration::from_millis(10)),
                }
            };

            if timed_out {
                outcomes.push(TestOutcome {
                    assertion: assertion.clone(),
                    passed: false,
                    observed: "TIMEOUT".into(),
                    expected: textual_expected(assertion),
                });
                continue;
            }

            let output = child.wait_with_output()?;
            let stdout = String::from_utf8_lossy(&output.stdout);
            let verdict: Option<RunnerVerdict> =
                stdout.lines().last().and_then(|l| serde_json::from_str(l).ok());
            match verdict {
                Some(v) => outcomes.push(TestOutcome {
                    assertion: assertion.clone(),
                    passed: v.passed,
                    observed: v.observed,
                    expected: v.expected,
                }),
                None => outcomes.push(TestOutcome {
                    assertion: assertion.clone(),
                    passed: false,
                    observed: format!("ERROR: runner produced no verdict ({})", output.status),
                    expected: textual_expected(assertion),
                }),
            }
        }
        Ok(outcomes)
    }
}

/// Render the pass/fail report fed to the evaluator: the passed section,
/// then the failed section, each with its empty marker when blank. Failed
/// entries carry the observed and expected values.
pub fn format_test_report(results: &[TestOutcome]) -> String {
    let passed: Vec<&TestOutcome> = results.iter().filter(|r| r.passed).collect();
    let failed: Vec<&TestOutcome> = results.iter().filter(|r| !r.passed).collect();

    let passed_section = if passed.is_empty() {
        "No tests passed.".to_string()
    } else {
        passed.iter().map(|r| r.assertion.clone()).collect::<Vec<_>>().join("\n")
    };
    let failed_section = if failed.is_empty() {
        "No tests failed.".to_string()
    } else {
        failed
            .iter()
            .map(|r| {
                format!(
                    "{} # ERROR: This unit test fails. Output was {}, but expected value was: {}",
                    r.assertion, r.observed, r.expected
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    };

    format!("Tests that the code passed:\n{passed_section}\n\n**Tests that the code failed:**\n\n{failed_section}")
}

/// Invoke a pluggable external submitter as `submit <problem_id>
/// <source_file>`; the last stdout line decides pass/fail. This is the
/// hook for platform evaluation without shipping any platform client.
pub fn submit_external(submitter: &Path, problem_id: &str, source: &Path) -> Result<bool> {
    let output = Command::new(submitter)
        .arg(problem_id)
        .arg(source)
        .stdin(Stdio::null())
        .output()
        .map_err(|e| Error::Environment(format!("cannot run submitter {submitter:?}: {e}")))?;
    let stdout = String::from_utf8_lossy(&output.stdout);
    match stdout.lines().filter(|l| !l.trim().is_empty()).last() {
        Some(line) => match line.trim().to_lowercase().as_str() {
            "pass" | "passed" => Ok(true),
            "fail" | "failed" => Ok(false),
            other => Err(Error::Environment(format!(
                "submitter verdict '{other}' is neither pass nor fail"
            ))),
        },
        None => Err(Error::Environment("submitter produced no output".into())),
    }
}

/// Strip a markdown code fence when present; completions often wrap code.
pub fn extract_code(completion: &str) -> String {
    let trimmed = completion.trim();
    if let Some(start) = trimmed.find("```") {
        let after = &trimmed[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return body[..end].trim().to_string();
        }
    }
    trimmed.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(assertion: &str, passed: bool, observed: &str, expected: &str) -> TestOutcome {
        TestOutcome {
            assertion: assertion.into(),
            passed,
            observed: observed.into(),
            expected: expected.into(),
        }
    }

    #[test]
    fn report_shapes_failure_lines() {
        let report = format_test_report(&[
            outcome("assert putMarbles([1,3,5,1], 2) == 4", false, "2", "4"),
            outcome("assert putMarbles([1,3], 2) == 0", false, "-1", "0"),
        ]);
        assert!(report.starts_with("Tests that the code passed:\nNo tests passed."));
        assert!(report.contains("**Tests that the code failed:**"));
        assert!(report.contains(
            "assert putMarbles([1,3,5,1], 2) == 4 # ERROR: This unit test fails. Output was 2, but expected value was: 4"
        ));
    }

    #[test]
    fn report_all_pass() {
        let report = format_test_report(&[outcome("assert f() == 1", true, "1", "1")]);
        assert!(report.contains("Tests that the code passed:\nassert f() == 1"));
        assert!(report.contains("No tests failed."));
    }

    #[test]
    fn report_empty_sections() {
        let report = format_test_report(&[]);
        assert!(report.contains("No tests passed."));
        assert!(report.contains("No tests failed."));
    }

    #[test]
    fn extract_code_handles_fences() {
        assert_eq!(extract_code("```python\nx = 1\n```"), "x = 1");
        assert_eq!(extract_code("prose\n```\ny = 2\n```\nmore"), "y = 2");
        assert_eq!(extract_code("plain code"), "plain code");
    }

    #[test]
    fn runs_passing_and_failing_assertions() {
        let exec = Executor::default();
        exec.check_available().unwrap();
        let code = "def add(a, b):\n    return a + b\n";
        let outcomes = exec
            .run_tests(
                code,
                &["assert add(1, 2) == 3".to_string(), "assert add(1, 2) == 4".to_string()],
            )
            .unwrap();
        assert!(outcomes[0].passed);
        assert!(!outcomes[1].passed);
        assert_eq!(outcomes[1].observed, "3");
        assert_eq!(outcomes[1].expected, "4");
    }

    #[test]
    fn broken_code_reports_error() {
        let exec = Executor::default();
        exec.check_available().unwrap();
        let outcomes =
            exec.run_tests("def f(:\n", &["assert f() == 1".to_string()]).unwrap();
        assert!(!outcomes[0].passed);
        assert!(outcomes[0].observed.starts_with("ERROR:"));
    }

    #[test]
    fn timeout_is_a_failure_marked_timeout() {
        let exec = Executor { per_test_timeout: Duration::from_millis(300), ..Executor::default() };
        exec.check_available().unwrap();
        let code = "def spin():\n    while True:\n        pass\n";
        let outcomes = exec.run_tests(code, &["assert spin() == 1".to_string()]).unwrap();
        assert!(!outcomes[0].passed);
        assert_eq!(outcomes[0].observed, "TIMEOUT");
        assert_eq!(outcomes[0].expected, "1");
    }

    #[test]
    fn missing_interpreter_is_environment_error() {
        let exec = Executor { python: "definitely-not-python".into(), ..Executor::default() };
        assert!(matches!(exec.check_available(), Err(Error::Environment(_))));
    }
}
