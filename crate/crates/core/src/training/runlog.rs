//! Run persistence.
//!
//! A run directory holds:
//!
//! - `steps.jsonl`: one [`StepLine`] per optimization step
//! - `exchanges.jsonl`: the optimizer prompt and response of each step
//! - `eval.jsonl`: test-set metrics, when per-step evaluation is enabled
//! - `config.json`: the configuration snapshot
//! - `theta_final.txt`: the final learned text

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{Input, Prediction, RunConfig, StepRecord, Target};
use crate::error::{Result, VmlError};

pub const STEPS_FILE: &str = "steps.jsonl";
pub const EXCHANGES_FILE: &str = "exchanges.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const THETA_FILE: &str = "theta_final.txt";

/// The JSONL projection of a [`StepRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub epoch: usize,
    pub step: usize,
    pub inputs: Vec<Input>,
    pub targets: Vec<Target>,
    pub predictions: Vec<Target>,
    pub raw_texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_ce: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_zero_one: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub theta_before: String,
    pub theta_after: String,
    pub reasoning: String,
    pub parse_failures: usize,
    pub duration_ms: u64,
}

impl StepLine {
    pub fn from_record(r: &StepRecord) -> Self {
        StepLine {
            epoch: r.epoch,
            step: r.step,
            inputs: r.inputs.clone(),
            targets: r.targets.clone(),
            predictions: r.predictions.iter().map(|p| p.value.clone()).collect(),
            raw_texts: r.predictions.iter().map(|p| p.raw_text.clone()).collect(),
            loss_mse: r.loss_mse,
            loss_ce: r.loss_ce,
            loss_zero_one: r.loss_zero_one,
            accuracy: r.accuracy,
            theta_before: r.theta_before.clone(),
            theta_after: r.theta_after.clone(),
            reasoning: r.reasoning.clone(),
            parse_failures: r.parse_failures,
            duration_ms: r.duration_ms,
        }
    }

    /// The loss printed as "Overall Loss".
    pub fn loss(&self) -> Option<f64> {
        self.loss_mse.or(self.loss_ce).or(self.loss_zero_one)
    }

    /// Rebuilds a record. Per-prediction parse flags are not logged, so every
    /// prediction is marked as parsed.
    pub fn into_record(self, exchange: Option<ExchangeLine>) -> StepRecord {
        let (prompt, response) = exchange.map(|e| (e.prompt, e.response)).unwrap_or_default();
        let loss = self.loss().unwrap_or(f64::NAN);
        StepRecord {
            epoch: self.epoch,
            step: self.step,
            inputs: self.inputs,
            targets: self.targets,
            predictions: self
                .predictions
                .into_iter()
                .zip(self.raw_texts)
                .map(|(value, raw_text)| Prediction {
                    value,
                    raw_text,
                    parse_ok: true,
                })
                .collect(),
            raw_optimizer_prompt: prompt,
            raw_optimizer_response: response,
            loss,
            loss_mse: self.loss_mse,
            loss_ce: self.loss_ce,
            loss_zero_one: self.loss_zero_one,
            accuracy: self.accuracy,
            theta_before: self.theta_before,
            theta_after: self.theta_after,
            reasoning: self.reasoning,
            parse_failures: self.parse_failures,
            duration_ms: self.duration_ms,
        }
    }
}

/// Sidecar line holding the optimizer exchange of one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeLine {
    pub step: usize,
    pub prompt: String,
    pub response: String,
    /// False when the response was unparseable and theta was kept.
    #[serde(default = "yes")]
    pub accepted: bool,
}

fn yes() -> bool {
    true
}

/// Test-set metrics after a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalLine {
    pub step: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub parse_failures: usize,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, tolerate_partial_tail: bool) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let complete = text.ends_with('\n') || text.is_empty();
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if tolerate_partial_tail && !complete && i + 1 == lines.len() => break,
            Err(e) => {
                return Err(VmlError::CorruptLog {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Reads a `steps.jsonl` file, or the one inside a run directory.
pub fn read_log(path: &Path) -> Result<Vec<StepLine>> {
    let file = if path.is_dir() {
        path.join(STEPS_FILE)
    } else {
        path.to_path_buf()
    };
    read_jsonl(&file, false)
}

/// Reads the exchanges sidecar of a run directory.
pub fn read_exchanges(dir: &Path) -> Result<Vec<ExchangeLine>> {
    read_jsonl(&dir.join(EXCHANGES_FILE), false)
}

/// Rewrites `path` keeping the first `keep` lines.
fn truncate_lines(path: &Path, keep: usize) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let mut out = String::new();
    for line in text.lines().take(keep) {
        out.push_str(line);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Previously persisted state of a resumed run.
#[derive(Debug, Clone, Default)]
pub struct ResumeState {
    pub steps: Vec<StepLine>,
    pub exchanges: Vec<ExchangeLine>,
}

/// Single-writer appender for a run directory.
#[derive(Debug)]
pub struct RunLogWriter {
    dir: PathBuf,
    steps: BufWriter<File>,
    exchanges: BufWriter<File>,
    eval: BufWriter<File>,
}

impl RunLogWriter {
    /// Opens a run directory. With `resume`, complete steps already on disk
    /// are kept and returned; otherwise existing logs are replaced.
    pub fn open(dir: &Path, config: &RunConfig, resume: bool) -> Result<(Self, ResumeState)> {
        fs::create_dir_all(dir)?;
        let steps_path = dir.join(STEPS_FILE);
        let ex_path = dir.join(EXCHANGES_FILE);
        let mut state = ResumeState::default();
        if resume && steps_path.exists() {
            state.steps = read_jsonl(&steps_path, true)?;
            state.exchanges = if ex_path.exists() {
                read_jsonl(&ex_path, true)?
            } else {
                Vec::new()
            };
            let done = state.steps.len().min(state.exchanges.len());
            state.steps.truncate(done);
            state.exchanges.truncate(done);
            truncate_lines(&steps_path, done)?;
            truncate_lines(&ex_path, done)?;
        } else {
            for name in [STEPS_FILE, EXCHANGES_FILE, EVAL_FILE, THETA_FILE] {
                let p = dir.join(name);
                if p.exists() {
                    fs::remove_file(p)?;
                }
            }
        }
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(config)? + "\n")?;
        let append = |p: PathBuf| -> Result<BufWriter<File>> {
            Ok(BufWriter::new(OpenOptions::new().create(true).append(true).open(p)?))
        };
        Ok((
            RunLogWriter {
                dir: dir.to_path_buf(),
                steps: append(steps_path)?,
                exchanges: append(ex_path)?,
                eval: append(dir.join(EVAL_FILE))?,
            },
            state,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Persists one step; both files are flushed before returning.
    pub fn append(&mut self, record: &StepRecord, accepted: bool) -> Result<()> {
        let ex = ExchangeLine {
            step: record.step,
            prompt: record.raw_optimizer_prompt.clone(),
            response: record.raw_optimizer_response.clone(),
            accepted,
        };
        serde_json::to_writer(&mut self.exchanges, &ex)?;
        self.exchanges.write_all(b"\n")?;
        self.exchanges.flush()?;
        serde_json::to_writer(&mut self.steps, &StepLine::from_record(record))?;
        self.steps.write_all(b"\n")?;
        self.steps.flush()?;
        Ok(())
    }

    pub fn append_eval(&mut self, line: &EvalLine) -> Result<()> {
        serde_json::to_writer(&mut self.eval, line)?;
        self.eval.write_all(b"\n")?;
        self.eval.flush()?;
        Ok(())
    }

    pub fn write_final_theta(&self, theta: &str) -> Result<()> {
        fs::write(self.dir.join(THETA_FILE), theta)?;
        Ok(())
    }
}

/// Metrics that can be exported.
pub const METRICS: [&str; 5] = ["loss", "loss_mse", "loss_ce", "loss_zero_one", "accuracy"];

fn metric_value(line: &StepLine, metric: &str) -> Option<f64> {
    match metric {
        "loss" => line.loss(),
        "loss_mse" => line.loss_mse,
        "loss_ce" => line.loss_ce,
        "loss_zero_one" => line.loss_zero_one,
        "accuracy" => line.accuracy,
        _ => None,
    }
}

/// CSV of `step,loss,accuracy`, or `step,<metric>` for a single metric.
///
/// Accuracy is left blank for regression logs in the default layout; a
/// requested metric must be present on every line.
pub fn export_csv(lines: &[StepLine], metric: Option<&str>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| VmlError::Io(std::io::Error::other(e.to_string()));
    match metric {
        None => {
            w.write_record(["step", "loss", "accuracy"]).map_err(csv_err)?;
            for l in lines {
                let loss = l.loss().map(|v| v.to_string()).unwrap_or_default();
                let acc = l.accuracy.map(|v| v.to_string()).unwrap_or_default();
                w.write_record([l.step.to_string(), loss, acc]).map_err(csv_err)?;
            }
        }
        Some(m) => {
            if !METRICS.contains(&m) {
                return Err(VmlError::invalid(format!(
                    "unknown metric '{m}', expected one of {METRICS:?}"
                )));
            }
            w.write_record(["step", m]).map_err(csv_err)?;
            for l in lines {
                let v = metric_value(l, m)
                    .ok_or_else(|| VmlError::invalid(format!("metric '{m}' is absent at step {}", l.step)))?;
                w.write_record([l.step.to_string(), v.to_string()]).map_err(csv_err)?;
            }
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| VmlError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BuiltinTask;

    fn record(step: usize) -> StepRecord {
        StepRecord {
            epoch: 1,
            step,
            inputs: vec![Input::Vector(vec![1.0])],
            targets: vec![Target::Real(2.0)],
            predictions: vec![Prediction {
                value: Target::Real(1.5),
                raw_text: "Output: [1.5]".into(),
                parse_ok: true,
            }],
            raw_optimizer_prompt: "p".into(),
            raw_optimizer_response: "r".into(),
            loss: 0.25,
            loss_mse: Some(0.25),
            loss_ce: None,
            loss_zero_one: None,
            accuracy: None,
            theta_before: format!("t{}", step - 1),
            theta_after: format!("t{step}"),
            reasoning: String::new(),
            parse_failures: 0,
            duration_ms: 1,
        }
    }

    #[test]
    fn field_order_and_roundtrip() {
        let line = StepLine::from_record(&record(1));
        let json = serde_json::to_string(&line).unwrap();
        let keys = [
            "epoch",
            "step",
            "inputs",
            "targets",
            "predictions",
            "raw_texts",
            "loss_mse",
            "theta_before",
            "theta_after",
            "reasoning",
            "parse_failures",
            "duration_ms",
        ];
        let positions: Vec<usize> = keys.iter().map(|k| json.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{json}");
        assert!(!json.contains("loss_ce"));
        let back: StepLine = serde_json::from_str(&json).unwrap();
        assert_eq!(back, line);
    }

    #[test]
    fn write_read_resume_and_export() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::for_task(BuiltinTask::Linear);
        let (mut w, state) = RunLogWriter::open(dir.path(), &cfg, false).unwrap();
        assert!(state.steps.is_empty());
        for s in 1..=3 {
            w.append(&record(s), true).unwrap();
        }
        drop(w);
        let lines = read_log(dir.path()).unwrap();
        assert_eq!(lines.len(), 3);

        let mut f = OpenOptions::new()
            .append(true)
            .open(dir.path().join(STEPS_FILE))
            .unwrap();
        f.write_all(b"{\"epoch\": 1, \"st").unwrap();
        drop(f);
        let (_w, state) = RunLogWriter::open(dir.path(), &cfg, true).unwrap();
        assert_eq!(state.steps.len(), 3);
        assert_eq!(read_log(dir.path()).unwrap().len(), 3);

        let csv = export_csv(&lines, None).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().nth(1), Some("1,0.25,"));
        assert!(export_csv(&lines, Some("accuracy")).is_err());
        assert!(export_csv(&lines, Some("bogus")).is_err());
        assert_eq!(
            export_csv(&lines, Some("loss_mse")).unwrap().lines().next(),
            Some("step,loss_mse")
        );
    }

    #[test]
    fn corrupt_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(STEPS_FILE);
        let good = serde_json::to_string(&StepLine::from_record(&record(1))).unwrap();
        fs::write(&path, format!("{good}\n{good}\nnot json\n")).unwrap();
        match read_log(&path) {
            Err(VmlError::CorruptLog { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
