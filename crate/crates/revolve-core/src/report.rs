//! Aggregation of run logs into a report: per-iteration metrics, final
//! metric mean ± sample standard deviation over seeds, and relative
//! improvement over a named baseline, computed as (x − baseline) / baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::runlog::{config_record, final_record, read_log, RECORD_ITERATION_SUMMARY};

#[derive(Debug, Clone)]
pub struct Report {
    pub task: String,
    pub runs: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    pub per_iteration: Vec<(u32, f64)>,
    pub baseline_mean: Option<f64>,
    /// Fractional improvement over the baseline mean.
    pub relative_improvement: Option<f64>,
}

/// Mean and sample standard deviation (n−1 denominator; none for a single
/// value).
pub fn mean_sd(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.is_empty() {
        return Err(Error::validation("no values to aggregate"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Ok((mean, None));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, Some(var.sqrt())))
}

/// Relative improvement of `value` over `baseline` as a fraction.
pub fn relative_improvement(value: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::validation("relative improvement over a zero baseline"));
    }
    Ok((value - baseline) / baseline)
}

struct ParsedLog {
    task: String,
    final_metric: f64,
    iteration_metrics: Vec<(u32, f64)>,
}

fn parse_log(path: &Path) -> Result<ParsedLog> {
    let records = read_log(path)?;
    let config = config_record(&records)?;
    let task = config["data"]["task"]
        .as_str()
        .ok_or_else(|| Error::Config(format!("{path:?}: CONFIG record has no task")))?
        .to_string();
    let final_rec = final_record(&records)
        .ok_or_else(|| Error::Config(format!("{path:?}: run log has no FINAL record")))?;
    let final_metric = final_rec["data"]["metric"]
        .as_f64()
        .ok_or_else(|| Error::Config(format!("{path:?}: FINAL record has no metric")))?;
    let mut iteration_metrics = Vec::new();
    for r in &records {
        if r["record"] == RECORD_ITERATION_SUMMARY {
            if let (Some(iteration), Some(metric)) =
                (r["iteration"].as_u64(), r["data"]["metric"].as_f64())
            {
                iteration_metrics.push((iteration as u32, metric));
            }
        }
    }
    Ok(ParsedLog { task, final_metric, iteration_metrics })
}

/// Aggregate FINAL metrics across seed logs; all logs must come from the
/// same task. The per-iteration table averages the iteration metrics that
/// appear across logs.
pub fn build_report(paths: &[impl AsRef<Path>], baseline: Option<&Path>) -> Result<Report> {
    if paths.is_empty() {
        return Err(Error::validation("report needs at least one run log"));
    }
    let parsed: Vec<ParsedLog> =
        paths.iter().map(|p| parse_log(p.as_ref())).collect::<Result<_>>()?;
    let task = parsed[0].task.clone();
    for p in &parsed {
        if p.task != task {
            return Err(Error::validation(format!(
                "mixed tasks in one report: '{}' and '{}'",
                task, p.task
            )));
        }
    }
    let finals: Vec<f64> = parsed.iter().map(|p| p.final_metric).collect();
    let (mean, sd) = mean_sd(&finals)?;

    let mut per_iteration: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for p in &parsed {
        for (iteration, metric) in &p.iteration_metrics {
            per_iteration.entry(*iteration).or_default().push(*metric);
        }
    }
    let per_iteration: Vec<(u32, f64)> = per_iteration
        .into_iter()
        .map(|(it, vals)| (it, vals.iter().sum::<f64>() / vals.len() as f64))
        .collect();

    let (baseline_mean, relative) = match baseline {
        Some(path) => {
            let b = parse_log(path)?;
            if b.task != task {
                return Err(Error::validation(format!(
                    "baseline task '{}' differs from report task '{}'",
                    b.task, task
                )));
            }
            let improvement = relative_improvement(mean, b.final_metric)?;
            (Some(b.final_metric), Some(improvement))
        }
        None => (None, None),
    };

    Ok(Report {
        task,
        runs: parsed.len(),
        mean,
        sd,
        per_iteration,
        baseline_mean,
        relative_improvement: relative,
    })
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task: {}  runs: {}", self.task, self.runs)?;
        if !self.per_iteration.is_empty() {
            writeln!(f, "iteration  metric")?;
            for (iteration, metric) in &self.per_iteration {
                writeln!(f, "{iteration:>9}  {metric:.4}")?;
            }
        }
        match self.sd {
            Some(sd) => writeln!(f, "final: {:.4} ± {:.4}", self.mean, sd)?,
            None => writeln!(f, "final: {:.4}", self.mean)?,
        }
        if let (Some(baseline), Some(improvement)) = (self.baseline_mean, self.relative_improvement)
        {
            writeln!(
                f,
                "baseline: {:.4}  improvement: {:+.2}%",
                baseline,
                improvement * 100.0
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_sd() {
        let (mean, sd) = mean_sd(&[0.30, 0.31, 0.31, 0.32, 0.31]).unwrap();
        assert!((mean - 0.31).abs() < 1e-12);
        // Hand-computed: var = (1e-4 + 0 + 0 + 1e-4 + 0) / 4 = 5e-5.
        assert!((sd.unwrap() - (5e-5f64).sqrt()).abs() < 1e-12);
        let (single, sd) = mean_sd(&[0.5]).unwrap();
        assert_eq!(single, 0.5);
        assert!(sd.is_none());
    }

    #[test]
    fn relative_improvement_convention() {
        // 0.31 over a 0.24 baseline is +29.17% at two decimals.
        let improvement = relative_improvement(0.31, 0.24).unwrap();
        assert_eq!(format!("{:+.2}%", improvement * 100.0), "+29.17%");
        assert!(relative_improvement(0.3, 0.0).is_err());
    }
}
