//! File formats for attack results, tuning histories, curves, and
//! comparison tables.
//!
//! JSON documents carry a `header` block with the resolved configuration;
//! CSV files carry the same provenance as `#`-prefixed comment lines before
//! the column header. Norms and medians that are infinite in memory are
//! stored as JSON `null`. No timestamps enter any file, so identical runs
//! produce identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attack::{AttackResult, SampleResult, TraceRow};
use crate::error::{Error, Result};
use crate::eval::CompareRow;
use crate::hyperopt::{History, HyperPoint, Observation, SearchSpace};

/// Provenance block embedded at the top of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Fully resolved configuration of the producing run.
    pub config: Value,
}

impl FileHeader {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        FileHeader {
            tool: "hofmn".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
        }
    }

    fn comment_lines(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# tool: {} {}\n", self.tool, self.version));
        out.push_str(&format!("# command: {}\n", self.command));
        out.push_str(&format!("# seed: {}\n", self.seed));
        out.push_str(&format!(
            "# config: {}\n",
            serde_json::to_string(&self.config).expect("config serializes")
        ));
        out
    }
}

fn opt_from_norm(norm: f64) -> Option<f64> {
    norm.is_finite().then_some(norm)
}

fn norm_from_opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::INFINITY)
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultRowDoc {
    index: usize,
    clean_correct: bool,
    success: bool,
    /// Absent (null) when no adversarial perturbation was found.
    best_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_delta: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultFileDoc {
    header: FileHeader,
    results: Vec<ResultRowDoc>,
}

/// Serialize an attack result; `include_deltas` controls whether the raw
/// perturbations are embedded.
pub fn result_to_json(
    header: &FileHeader,
    result: &AttackResult,
    include_deltas: bool,
) -> String {
    let doc = ResultFileDoc {
        header: header.clone(),
        results: result
            .per_sample
            .iter()
            .map(|s| ResultRowDoc {
                index: s.index,
                clean_correct: s.clean_correct,
                success: s.success,
                best_norm: opt_from_norm(s.best_norm),
                best_delta: if include_deltas { s.best_delta.clone() } else { None },
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("result serializes");
    text.push('\n');
    text
}

pub fn result_from_json(text: &str) -> Result<(FileHeader, AttackResult)> {
    let doc: ResultFileDoc =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("result file: {e}")))?;
    let per_sample = doc
        .results
        .into_iter()
        .map(|r| SampleResult {
            index: r.index,
            clean_correct: r.clean_correct,
            success: r.success,
            best_norm: norm_from_opt(r.best_norm),
            best_delta: r.best_delta,
            trace: None,
        })
        .collect();
    Ok((doc.header, AttackResult { per_sample }))
}

pub fn save_result(
    path: impl AsRef<Path>,
    header: &FileHeader,
    result: &AttackResult,
    include_deltas: bool,
) -> Result<()> {
    fs::write(path, result_to_json(header, result, include_deltas))?;
    Ok(())
}

pub fn load_result(path: impl AsRef<Path>) -> Result<(FileHeader, AttackResult)> {
    result_from_json(&fs::read_to_string(path)?)
}

/// One line of the line-delimited tuning history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config_id: String,
    pub hyperparameters: std::collections::BTreeMap<String, f64>,
    /// Absent (null) when the trial's attack mostly failed.
    pub median: Option<f64>,
    pub wall_time_s: f64,
}

impl TrialRecord {
    pub fn from_observation(config_id: &str, obs: &Observation, wall_time_s: f64) -> Self {
        TrialRecord {
            trial: obs.trial,
            config_id: config_id.into(),
            hyperparameters: obs.point.values.clone(),
            median: opt_from_norm(obs.median),
            wall_time_s,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HistoryHeaderLine {
    header: FileHeader,
}

/// Write a history file: one JSON header line, then one JSON line per trial.
pub fn history_to_jsonl(header: &FileHeader, records: &[TrialRecord]) -> String {
    let mut out = String::new();
    out.push_str(
        &serde_json::to_string(&HistoryHeaderLine {
            header: header.clone(),
        })
        .expect("header serializes"),
    );
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn history_from_jsonl(text: &str) -> Result<(FileHeader, Vec<TrialRecord>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines
        .next()
        .ok_or_else(|| Error::Parse("empty history file".into()))?;
    let head: HistoryHeaderLine =
        serde_json::from_str(first).map_err(|e| Error::Parse(format!("history header: {e}")))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let rec: TrialRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("history line {}: {e}", i + 2)))?;
        records.push(rec);
    }
    Ok((head.header, records))
}

pub fn save_history(
    path: impl AsRef<Path>,
    header: &FileHeader,
    records: &[TrialRecord],
) -> Result<()> {
    fs::write(path, history_to_jsonl(header, records))?;
    Ok(())
}

pub fn load_history(path: impl AsRef<Path>) -> Result<(FileHeader, Vec<TrialRecord>)> {
    history_from_jsonl(&fs::read_to_string(path)?)
}

/// Rebuild a typed tuning history for one configuration from file records.
pub fn history_for_config(
    records: &[TrialRecord],
    config_id: &str,
    space: &SearchSpace,
) -> Result<History> {
    let mut observations = Vec::new();
    for r in records.iter().filter(|r| r.config_id == config_id) {
        let point: HyperPoint = space.point_from_values(&r.hyperparameters)?;
        observations.push(Observation {
            trial: r.trial,
            point,
            median: norm_from_opt(r.median),
        });
    }
    History::from_observations(observations)
}

/// Curve CSV: provenance comments, then `epsilon,robust_accuracy` rows.
pub fn curve_to_csv(header: &FileHeader, rows: &[(f64, f64)]) -> String {
    let mut out = header.comment_lines();
    out.push_str("epsilon,robust_accuracy\n");
    for (eps, ra) in rows {
        out.push_str(&format!("{eps},{ra}\n"));
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "epsilon,robust_accuracy" {
                return Err(Error::Parse("curve CSV header mismatch".into()));
            }
            saw_header = true;
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("bad curve row '{line}'")))?;
        rows.push((
            a.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?,
            b.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?,
        ));
    }
    if !saw_header {
        return Err(Error::Parse("curve CSV missing header".into()));
    }
    Ok(rows)
}

/// Comparison CSV mirroring the runtime table: method, cumulative time,
/// median norm (empty cell when infinite).
pub fn compare_to_csv(header: &FileHeader, rows: &[CompareRow]) -> String {
    let mut out = header.comment_lines();
    out.push_str("method,total_time_s,median_norm\n");
    for r in rows {
        let median = if r.median_norm.is_finite() {
            format!("{}", r.median_norm)
        } else {
            String::new()
        };
        out.push_str(&format!("{},{},{median}\n", r.method, r.total_time_s));
    }
    out
}

/// Per-iteration trace CSV: `sample,k,norm,loss,eps,alpha`.
pub fn trace_to_csv(header: &FileHeader, traces: &[(usize, &[TraceRow])]) -> String {
    let mut out = header.comment_lines();
    out.push_str("sample,k,norm,loss,eps,alpha\n");
    for (sample, rows) in traces {
        for r in *rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                sample, r.k, r.norm, r.loss, r.eps, r.alpha
            ));
        }
    }
    out
}
