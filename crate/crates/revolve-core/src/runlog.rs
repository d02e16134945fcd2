//! Seeded, replayable run logs.
//!
//! A RunLog is JSONL: one record per event, each carrying the run id, seed,
//! iteration and a logical timestamp `seq` (a monotone event counter, so a
//! rerun with the same config, seed and responses is byte-identical).
//! Wall-clock millis are added only when the run config enables profiling.
//! A run that fails mid-way still ends with a parseable ERROR record.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub const RECORD_CONFIG: &str = "CONFIG";
pub const RECORD_FORWARD: &str = "FORWARD";
pub const RECORD_LOSS: &str = "LOSS";
pub const RECORD_GRADIENT: &str = "GRADIENT";
pub const RECORD_OPTIMIZER_STEP: &str = "OPTIMIZER_STEP";
pub const RECORD_VALIDATION: &str = "VALIDATION";
pub const RECORD_ITERATION_SUMMARY: &str = "ITERATION_SUMMARY";
pub const RECORD_FINAL: &str = "FINAL";
pub const RECORD_ERROR: &str = "ERROR";

/// Append-only JSONL writer. Each record is flushed as written.
pub struct RunLogWriter {
    out: BufWriter<File>,
    run_id: String,
    seed: u64,
    iteration: u32,
    seq: u64,
    profile: bool,
}

impl RunLogWriter {
    pub fn create(path: &Path, run_id: impl Into<String>, seed: u64, profile: bool) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            run_id: run_id.into(),
            seed,
            iteration: 0,
            seq: 0,
            profile,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn set_iteration(&mut self, iteration: u32) {
        self.iteration = iteration;
    }

    /// Append one record. `data` must be a JSON object; its fields are
    /// nested under "data".
    pub fn write(&mut self, record: &str, data: Value) -> Result<()> {
        self.seq += 1;
        let mut envelope = Map::new();
        envelope.insert("record".into(), json!(record));
        envelope.insert("run_id".into(), json!(self.run_id));
        envelope.insert("seed".into(), json!(self.seed));
        envelope.insert("iteration".into(), json!(self.iteration));
        envelope.insert("seq".into(), json!(self.seq));
        if self.profile {
            let wall_ms =
                SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
            envelope.insert("wall_ms".into(), json!(wall_ms as u64));
        }
        envelope.insert("data".into(), data);
        let line = serde_json::to_string(&Value::Object(envelope))?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn error(&mut self, message: &str) -> Result<()> {
        self.write(RECORD_ERROR, json!({ "message": message }))
    }
}

/// Parsed record lines of an existing log.
pub fn read_log(path: &Path) -> Result<Vec<Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read run log {path:?}: {e}")))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| Error::Dataset {
            line: Some(i + 1),
            message: format!("bad run log line: {e}"),
        })?;
        records.push(value);
    }
    Ok(records)
}

/// The first record of a log, which must be CONFIG.
pub fn config_record(records: &[Value]) -> Result<&Value> {
    let first = records
        .first()
        .ok_or_else(|| Error::Config("run log is empty".into()))?;
    if first["record"] != RECORD_CONFIG {
        return Err(Error::Config("run log does not start with a CONFIG record".into()));
    }
    Ok(first)
}

/// The FINAL record of a log, if the run completed.
pub fn final_record(records: &[Value]) -> Option<&Value> {
    records.iter().rev().find(|r| r["record"] == RECORD_FINAL)
}
