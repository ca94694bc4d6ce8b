//! Write-ahead JSON persistence of sessions and runs under the data
//! directory:
//!
//! ```text
//! <data>/sessions/<id>.json   SessionState
//! <data>/runs/<id>.json       RunRecord
//! <data>/runs/<id>/           exported artifacts of a finished run
//! ```
//!
//! Every write goes to a temporary file that is synced and renamed into
//! place, so a reader sees either the old or the new record.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use formulink_core::agent::SessionState;
use formulink_harness::SCHEMA_VERSION;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Sweep,
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl RunStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, RunStatus::Done | RunStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub kind: RunKind,
    pub status: RunStatus,
    pub request: Value,
    /// The exported result document once the run is done.
    pub result: Option<Value>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn queued(run_id: String, kind: RunKind, request: Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run_id,
            kind,
            status: RunStatus::Queued,
            request,
            result: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn read_all<T: DeserializeOwned>(dir: &Path) -> std::io::Result<Vec<T>> {
    let mut out = Vec::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let text = fs::read_to_string(&p)?;
        match serde_json::from_str(&text) {
            Ok(v) => out.push(v),
            Err(e) => log::warn!("skipping unreadable record {}: {e}", p.display()),
        }
    }
    Ok(out)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("runs"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.json"))
    }

    fn run_path(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(format!("{id}.json"))
    }

    /// Directory for a run's exported artifacts.
    pub fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(id)
    }

    pub fn save_session(&self, s: &SessionState) -> std::io::Result<()> {
        let text = serde_json::to_vec_pretty(s).map_err(std::io::Error::other)?;
        write_atomic(&self.session_path(&s.session_id), &text)
    }

    pub fn save_run(&self, r: &RunRecord) -> std::io::Result<()> {
        let text = serde_json::to_vec_pretty(r).map_err(std::io::Error::other)?;
        write_atomic(&self.run_path(&r.run_id), &text)
    }

    pub fn load_sessions(&self) -> std::io::Result<Vec<SessionState>> {
        read_all(&self.root.join("sessions"))
    }

    pub fn load_runs(&self) -> std::io::Result<Vec<RunRecord>> {
        read_all(&self.root.join("runs"))
    }
}

/// Next id of the form `<prefix>-NNNNNN` after the largest existing one.
pub fn next_id<'a>(prefix: &str, existing: impl Iterator<Item = &'a str>) -> String {
    let n = existing
        .filter_map(|id| id.strip_prefix(prefix)?.strip_prefix('-')?.parse::<u64>().ok())
        .max()
        .map_or(1, |m| m + 1);
    format!("{prefix}-{n:06}")
}
