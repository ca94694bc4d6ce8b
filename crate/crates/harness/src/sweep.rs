//! Chunk-size × k sweep: one fully scripted session per setting on the
//! synthetic corpus, classified into an outcome and a round count.

use std::fmt;
use std::sync::Arc;

use formulink_core::agent::{
    run_auto, start_session, AutoOutcome, AutoStatus, FailureReason, IndexRef, SessionState,
};
use formulink_core::gateway::{Gateway, ModelProfile, SCRIPTED_BACKEND};
use formulink_core::kb::{build_index, Document, TokenSpan};
use formulink_core::sim::{diluted_facts, generate_corpus, scripted_designer, CorpusPlan, FactSpec, ScriptedBackend};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, SCHEMA_VERSION};

pub const CHUNK_SIZES: [usize; 5] = [1000, 2000, 3000, 4000, 5000];
pub const KS: [usize; 3] = [1, 3, 10];

/// The 15 settings in row order: chunk size major, k minor.
pub fn default_grid() -> Vec<(usize, usize)> {
    CHUNK_SIZES
        .iter()
        .flat_map(|&c| KS.iter().map(move |&k| (c, k)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Done,
    FailedMaxRounds,
    FailedQuality,
    ContextOversize,
    IngestError,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Done => "done",
            Outcome::FailedMaxRounds => "failed_max_rounds",
            Outcome::FailedQuality => "failed_quality",
            Outcome::ContextOversize => "context_oversize",
            Outcome::IngestError => "ingest_error",
        }
    }

    pub fn is_failure(self) -> bool {
        self != Outcome::Done
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub chunk_size: usize,
    pub k: usize,
    pub outcome: Outcome,
    pub rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepTable {
    pub schema_version: u32,
    pub corpus_seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, chunk_size: usize, k: usize) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.chunk_size == chunk_size && r.k == k)
    }

    pub fn any_failure(&self) -> bool {
        self.rows.iter().any(|r| r.outcome.is_failure())
    }
}

/// A finished sweep together with the final session of every setting.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub table: SweepTable,
    pub sessions: Vec<SessionState>,
}

/// Maps a finished session to a sweep outcome. A session that ran out of
/// rounds after retrieving some needed fact only in diluted chunks is a
/// quality failure rather than a plain round-limit failure.
pub fn classify(outcome: &AutoOutcome, needed: &[FactSpec]) -> Outcome {
    match (outcome.status, outcome.failure_reason) {
        (AutoStatus::Done, _) => Outcome::Done,
        (_, Some(FailureReason::IngestError)) => Outcome::IngestError,
        (_, Some(FailureReason::ContextOversize)) => Outcome::ContextOversize,
        _ => {
            let diluted = outcome.state.traces.iter().any(|t| {
                let spans: Vec<TokenSpan> = t.retrieved.iter().map(|h| h.token_span).collect();
                !diluted_facts(&spans, needed).is_empty()
            });
            if diluted {
                Outcome::FailedQuality
            } else {
                Outcome::FailedMaxRounds
            }
        }
    }
}

/// Runs the scripted designer and backend on one setting.
pub fn run_setting(
    doc: &Document,
    plan: &CorpusPlan,
    chunk_size: usize,
    k: usize,
) -> Result<AutoOutcome, HarnessError> {
    let mut gateway = Gateway::new();
    gateway.register_backend(SCRIPTED_BACKEND, Arc::new(ScriptedBackend::new(plan)))?;
    let built = build_index(std::slice::from_ref(doc), chunk_size);
    let index_ref = IndexRef {
        label: format!("corpus-{}-c{chunk_size}", plan.seed),
        chunk_size,
        ingest_error: built.as_ref().err().map(|e| e.to_string()),
    };
    let state = start_session(
        format!("sweep-c{chunk_size}-k{k}"),
        ModelProfile::scripted(),
        index_ref,
        k,
        plan.fact_targets(),
    )?;
    Ok(run_auto(&gateway, built.as_ref().ok(), state, &scripted_designer)?)
}

/// Sweeps `grid` on the corpus generated from `corpus_seed`, keeping every
/// final session.
pub fn run_sweep_with_sessions(
    corpus_seed: u64,
    grid: &[(usize, usize)],
) -> Result<SweepRun, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let (doc, plan) = generate_corpus(corpus_seed);
    let needed: Vec<FactSpec> = plan.needed_facts().cloned().collect();
    let cells: Vec<(SweepRow, SessionState)> = grid
        .par_iter()
        .map(|&(chunk_size, k)| {
            let out = run_setting(&doc, &plan, chunk_size, k)?;
            let row = SweepRow {
                chunk_size,
                k,
                outcome: classify(&out, &needed),
                rounds: out.rounds,
            };
            log::debug!("sweep ({chunk_size}, {k}): {} in {} rounds", row.outcome, row.rounds);
            Ok((row, out.state))
        })
        .collect::<Result<_, HarnessError>>()?;
    let (rows, sessions) = cells.into_iter().unzip();
    Ok(SweepRun {
        table: SweepTable {
            schema_version: SCHEMA_VERSION,
            corpus_seed,
            rows,
        },
        sessions,
    })
}

pub fn run_sweep(corpus_seed: u64, grid: &[(usize, usize)]) -> Result<SweepTable, HarnessError> {
    Ok(run_sweep_with_sessions(corpus_seed, grid)?.table)
}

/// The formulation text of a scripted session at one setting, or
/// `FormulationUnavailable` when that session did not finish.
pub fn iai_formulation(corpus_seed: u64, chunk_size: usize, k: usize) -> Result<String, HarnessError> {
    let (doc, plan) = generate_corpus(corpus_seed);
    let out = run_setting(&doc, &plan, chunk_size, k)?;
    match (out.status, out.formulation_text) {
        (AutoStatus::Done, Some(text)) => Ok(text),
        _ => Err(HarnessError::FormulationUnavailable(format!(
            "scripted session at chunk {chunk_size}, k {k} ended {:?}",
            out.failure_reason
        ))),
    }
}
