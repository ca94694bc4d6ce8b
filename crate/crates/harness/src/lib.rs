//! Experiment harness: the chunk-size × k sweep over scripted sessions, the
//! three-arm formulation comparison solved by PPO, and JSON/CSV export of
//! both.

pub mod compare;
pub mod export;
pub mod sweep;

use formulink_core::agent::AgentError;
use formulink_core::formulation::ParseError;
use formulink_core::gateway::GatewayError;
use formulink_netsim::ppo::SolverError;

/// Version stamped on every exported artifact.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("comparison needs at least one seed")]
    NoSeeds,
    #[error("agent formulation unavailable: {0}")]
    FormulationUnavailable(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("formulation parse failed: {0}")]
    Parse(#[from] ParseError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unsupported schema_version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
}
