//! Sweep and comparison runs with their artifact export, shared by the CLI
//! subcommands and the HTTP run endpoints.

use std::path::Path;

use formulink_harness::compare::{Comparator, ComparisonReport};
use formulink_harness::export::{export_comparison, export_sweep, export_traces, Format};
use formulink_harness::sweep::{default_grid, iai_formulation, run_sweep_with_sessions, SweepTable};
use formulink_harness::HarnessError;
use formulink_netsim::ppo::TrainConfig;
use serde::{Deserialize, Serialize};

/// Settings the happy-path agent session runs at when a comparison is not
/// given a finished session.
pub const IAI_SETTING: (usize, usize) = (2000, 1);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    /// Corpus seed; the service's configured seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRequest {
    /// Seeds per arm, 1..=5 when absent.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Overrides of the default training length, for quick runs.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub batch_episodes: Option<usize>,
    /// A finished session whose formulation is the iai arm.
    #[serde(default)]
    pub session_id: Option<String>,
}

impl CompareRequest {
    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| (1..=5).collect())
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        if let Some(n) = self.iterations {
            cfg.iterations = n;
        }
        if let Some(n) = self.batch_episodes {
            cfg.batch_episodes = n;
            cfg.minibatch_size = cfg.minibatch_size.min(n);
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.seeds.as_ref().is_some_and(|s| s.is_empty()) {
            return Err("seeds must not be empty".into());
        }
        if self.iterations == Some(0) {
            return Err("iterations must be at least 1".into());
        }
        self.train_config().validate().map_err(|e| e.to_string())
    }
}

/// Runs the full sweep and writes sweep.json, sweep.csv and traces/.
pub fn sweep_to_dir(seed: u64, out: &Path) -> Result<SweepTable, HarnessError> {
    let run = run_sweep_with_sessions(seed, &default_grid())?;
    export_sweep(out, &run.table, Format::Json)?;
    export_sweep(out, &run.table, Format::Csv)?;
    export_traces(out, &run.sessions)?;
    Ok(run.table)
}

/// Runs a comparison and writes comparison.json, comparison.csv and
/// curves.csv. Without `iai_text` the scripted happy-path session on the
/// synthetic corpus provides the agent formulation.
pub fn compare_to_dir(
    req: &CompareRequest,
    corpus_seed: u64,
    iai_text: Option<String>,
    out: &Path,
) -> Result<ComparisonReport, HarnessError> {
    let text = match iai_text {
        Some(t) => t,
        None => iai_formulation(corpus_seed, IAI_SETTING.0, IAI_SETTING.1)?,
    };
    let report = Comparator::new(req.train_config()).compare(&req.seeds(), Some(&text))?;
    export_comparison(out, &report, Format::Json)?;
    export_comparison(out, &report, Format::Csv)?;
    Ok(report)
}
