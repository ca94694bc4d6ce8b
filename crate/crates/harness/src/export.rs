//! JSON and CSV export of sweep tables, comparison reports and session
//! traces, plus readers for the JSON forms.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/sweep.json         SweepTable
//! <out>/sweep.csv          chunk_size,k,outcome,rounds
//! <out>/comparison.json    ComparisonReport
//! <out>/comparison.csv     arm,seed,final_score
//! <out>/curves.csv         arm,seed,iteration,mean_score
//! <out>/traces/<id>.json   one SessionTrace per session
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use formulink_core::agent::{FailureReason, RoundTrace, SessionState, Stage};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::compare::{Arm, ComparisonReport};
use crate::sweep::{Outcome, SweepRow, SweepTable};
use crate::{HarnessError, SCHEMA_VERSION};

pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const TRACES_DIR: &str = "traces";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Per-round trace of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub schema_version: u32,
    pub session_id: String,
    pub final_stage: Stage,
    pub failure_reason: Option<FailureReason>,
    pub rounds: Vec<RoundTrace>,
}

impl SessionTrace {
    pub fn of(state: &SessionState) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            session_id: state.session_id.clone(),
            final_stage: state.stage,
            failure_reason: state.failure_reason,
            rounds: state.traces.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCsvRow {
    pub arm: Arm,
    pub seed: u64,
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCsvRow {
    pub arm: Arm,
    pub seed: u64,
    pub iteration: usize,
    pub mean_score: f64,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String, HarnessError> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut s = to_json_string(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

/// Reads a versioned JSON artifact, rejecting unknown schema versions.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path)?;
    let probe: VersionProbe = serde_json::from_str(&text)?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(HarnessError::SchemaVersion {
            found: probe.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_str(&text)?)
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::Io(e.into_error()))
}

fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn sweep_csv(table: &SweepTable) -> Result<String, HarnessError> {
    let bytes = csv_bytes(table.rows.iter())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn comparison_rows(report: &ComparisonReport) -> Vec<ComparisonCsvRow> {
    report
        .arms
        .iter()
        .flat_map(|a| {
            a.runs.iter().map(move |r| ComparisonCsvRow {
                arm: a.arm,
                seed: r.seed,
                final_score: r.final_score,
            })
        })
        .collect()
}

pub fn curve_rows(report: &ComparisonReport) -> Vec<CurveCsvRow> {
    report
        .arms
        .iter()
        .flat_map(|a| {
            a.runs.iter().flat_map(move |r| {
                r.curve.iter().enumerate().map(move |(i, &s)| CurveCsvRow {
                    arm: a.arm,
                    seed: r.seed,
                    iteration: i + 1,
                    mean_score: s,
                })
            })
        })
        .collect()
}

/// Writes the sweep table in `format` under `dir` and returns the path.
pub fn export_sweep(dir: &Path, table: &SweepTable, format: Format) -> Result<PathBuf, HarnessError> {
    match format {
        Format::Json => {
            let p = dir.join(SWEEP_JSON);
            write_json(&p, table)?;
            Ok(p)
        }
        Format::Csv => {
            let p = dir.join(SWEEP_CSV);
            write_atomic(&p, &csv_bytes(table.rows.iter())?)?;
            Ok(p)
        }
    }
}

/// Writes the comparison report in `format` under `dir`. CSV produces both
/// the per-seed finals and the learning curves.
pub fn export_comparison(
    dir: &Path,
    report: &ComparisonReport,
    format: Format,
) -> Result<Vec<PathBuf>, HarnessError> {
    match format {
        Format::Json => {
            let p = dir.join(COMPARISON_JSON);
            write_json(&p, report)?;
            Ok(vec![p])
        }
        Format::Csv => {
            let finals = dir.join(COMPARISON_CSV);
            write_atomic(&finals, &csv_bytes(comparison_rows(report))?)?;
            let curves = dir.join(CURVES_CSV);
            write_atomic(&curves, &csv_bytes(curve_rows(report))?)?;
            Ok(vec![finals, curves])
        }
    }
}

/// Writes one trace file per session into `<dir>/traces/`.
pub fn export_traces(dir: &Path, sessions: &[SessionState]) -> Result<Vec<PathBuf>, HarnessError> {
    let traces = dir.join(TRACES_DIR);
    fs::create_dir_all(&traces)?;
    sessions
        .iter()
        .map(|s| {
            let p = traces.join(format!("{}.json", s.session_id));
            write_json(&p, &SessionTrace::of(s))?;
            Ok(p)
        })
        .collect()
}

pub fn read_sweep_json(path: &Path) -> Result<SweepTable, HarnessError> {
    read_json(path)
}

pub fn read_comparison_json(path: &Path) -> Result<ComparisonReport, HarnessError> {
    read_json(path)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    read_csv(path)
}

pub fn read_comparison_csv(path: &Path) -> Result<Vec<ComparisonCsvRow>, HarnessError> {
    read_csv(path)
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<CurveCsvRow>, HarnessError> {
    read_csv(path)
}

/// Count of rows per outcome, in outcome order.
pub fn outcome_counts(table: &SweepTable) -> Vec<(Outcome, usize)> {
    let mut counts = std::collections::BTreeMap::new();
    for r in &table.rows {
        *counts.entry(r.outcome).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}
