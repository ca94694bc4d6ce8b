//! Staged designer dialogue: each round builds a retrieval query from the
//! stage template, retrieves `k` chunks, assembles a budgeted prompt,
//! records the reply in memory and applies the stage's transition rule.
//!
//! Sessions are plain serialisable data. The knowledge index and the
//! gateway are supplied per call, so a session can be persisted between
//! rounds and resumed against the same index.

mod templates;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use templates::{template_for, templates, StageTemplate};

use crate::formulation::block_text;
use crate::gateway::{Gateway, GatewayError, ModelProfile, Passage, PromptBundle};
use crate::kb::{KbError, KnowledgeIndex, TokenSpan};
use crate::memory::{MemoryError, MemoryRecord, SessionMemory, DIGEST_BUDGET};

/// Hard cap on rounds per session, counting the requirements round.
pub const MAX_ROUNDS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Requirements,
    Scenario,
    Objective,
    ConstraintGathering,
    Formulate,
    Done,
    Failed,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Requirements,
        Stage::Scenario,
        Stage::Objective,
        Stage::ConstraintGathering,
        Stage::Formulate,
        Stage::Done,
        Stage::Failed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Requirements => "REQUIREMENTS",
            Stage::Scenario => "SCENARIO",
            Stage::Objective => "OBJECTIVE",
            Stage::ConstraintGathering => "CONSTRAINT_GATHERING",
            Stage::Formulate => "FORMULATE",
            Stage::Done => "DONE",
            Stage::Failed => "FAILED",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Stage::Done | Stage::Failed)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.label() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    MaxRounds,
    ContextOversize,
    IngestError,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureReason::MaxRounds => "max_rounds",
            FailureReason::ContextOversize => "context_oversize",
            FailureReason::IngestError => "ingest_error",
        })
    }
}

/// A fact the session must collect, with the words used to look it up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactTarget {
    pub id: u32,
    pub kind: String,
    /// Stage whose query asks for this fact first.
    pub stage: Stage,
    pub core_terms: Vec<String>,
}

/// Which index the session runs against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRef {
    pub label: String,
    pub chunk_size: usize,
    /// Set when the index could not be built.
    #[serde(default)]
    pub ingest_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Designer,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHit {
    pub doc: String,
    pub chunk: usize,
    pub score: f64,
    pub token_span: TokenSpan,
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u32,
    pub stage: Stage,
    pub query: Option<String>,
    pub retrieved: Vec<TraceHit>,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub reply: String,
    /// Needed facts first collected this round.
    pub facts_collected: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub stage: Stage,
    pub round: u32,
    pub memory: SessionMemory,
    pub facts_needed: Vec<FactTarget>,
    pub facts_collected: BTreeSet<u32>,
    pub profile: ModelProfile,
    pub index_ref: IndexRef,
    pub k: usize,
    pub transcript: Vec<Turn>,
    pub failure_reason: Option<FailureReason>,
    pub traces: Vec<RoundTrace>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("retrieval count k must be at least 1")]
    InvalidK,
    #[error("session is closed (stage {0})")]
    SessionClosed(Stage),
    #[error("session already used all {MAX_ROUNDS} rounds")]
    MaxRoundsExceeded,
    #[error("knowledge index unavailable: {0}")]
    Ingest(String),
    #[error("round {round}: prompt of {count} tokens exceeds the {budget}-token budget")]
    ContextOversize {
        round: u32,
        count: usize,
        budget: usize,
    },
    #[error("retrieval failed: {0}")]
    Retrieval(String),
    #[error(transparent)]
    Gateway(GatewayError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

impl From<KbError> for AgentError {
    fn from(e: KbError) -> Self {
        AgentError::Retrieval(e.to_string())
    }
}

/// Creates a fresh session in REQUIREMENTS at round 0.
pub fn start_session(
    session_id: impl Into<String>,
    profile: ModelProfile,
    index_ref: IndexRef,
    k: usize,
    facts_needed: Vec<FactTarget>,
) -> Result<SessionState, AgentError> {
    if k == 0 {
        return Err(AgentError::InvalidK);
    }
    Ok(SessionState {
        session_id: session_id.into(),
        stage: Stage::Requirements,
        round: 0,
        memory: SessionMemory::new(),
        facts_needed,
        facts_collected: BTreeSet::new(),
        profile,
        index_ref,
        k,
        transcript: Vec::new(),
        failure_reason: None,
        traces: Vec::new(),
    })
}

fn id_list(ids: impl Iterator<Item = u32>) -> String {
    let v: Vec<String> = ids.map(|i| i.to_string()).collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(",")
    }
}

impl SessionState {
    pub fn missing_facts(&self) -> impl Iterator<Item = &FactTarget> {
        self.facts_needed
            .iter()
            .filter(|f| !self.facts_collected.contains(&f.id))
    }

    /// Machine-readable status line embedded in every system prompt.
    pub fn state_line(&self) -> String {
        format!(
            "[STATE] stage={} missing={} collected={}",
            self.stage,
            id_list(self.missing_facts().map(|f| f.id)),
            id_list(self.facts_collected.iter().copied())
        )
    }

    pub fn last_agent_turn(&self) -> Option<&str> {
        self.transcript
            .iter()
            .rev()
            .find(|t| t.role == Role::Agent)
            .map(|t| t.text.as_str())
    }

    /// The final formulation block, once the session is DONE.
    pub fn formulation_text(&self) -> Option<String> {
        if self.stage != Stage::Done {
            return None;
        }
        self.last_agent_turn().and_then(block_text)
    }

    fn fail(&mut self, reason: FailureReason) {
        self.stage = Stage::Failed;
        self.failure_reason = Some(reason);
    }
}

/// `THOUGHT:` line content, if any.
pub fn thought_line(reply: &str) -> Option<&str> {
    reply
        .lines()
        .find_map(|l| l.trim_start().strip_prefix("THOUGHT:"))
        .map(str::trim)
}

/// Ids on `FACT: <id>` lines.
pub fn fact_claims(reply: &str) -> Vec<u32> {
    reply
        .lines()
        .filter_map(|l| l.trim_start().strip_prefix("FACT:"))
        .filter_map(|rest| rest.trim().parse().ok())
        .collect()
}

/// Runs one round. On a context-oversize or ingest failure the session is
/// moved to FAILED before the error is returned. Other gateway errors leave
/// the session untouched so the round can be retried.
pub fn advance(
    gateway: &Gateway,
    index: Option<&KnowledgeIndex>,
    state: &mut SessionState,
    user_message: &str,
) -> Result<RoundTrace, AgentError> {
    if state.stage.is_terminal() {
        return Err(AgentError::SessionClosed(state.stage));
    }
    if state.round >= MAX_ROUNDS {
        state.fail(FailureReason::MaxRounds);
        return Err(AgentError::MaxRoundsExceeded);
    }
    let index = match (index, &state.index_ref.ingest_error) {
        (Some(ix), None) => ix,
        (_, err) => {
            let msg = err.clone().unwrap_or_else(|| "index not built".into());
            state.fail(FailureReason::IngestError);
            return Err(AgentError::Ingest(msg));
        }
    };
    let template = template_for(state.stage).expect("non-terminal stage has a template");
    let round = state.round + 1;
    let stage = state.stage;

    let query = template.query_builder.map(|build| build(state, user_message));
    let hits = match &query {
        Some(q) => index.retrieve(q, state.k)?,
        None => Vec::new(),
    };
    let retrieved: Vec<TraceHit> = hits
        .iter()
        .map(|h| TraceHit {
            doc: h.chunk.doc_id.clone(),
            chunk: h.chunk.index,
            score: h.score,
            token_span: h.chunk.token_span,
        })
        .collect();
    let bundle = PromptBundle {
        system_text: format!("{}\n{}", template.instruction, state.state_line()),
        memory_digest: state.memory.digest(DIGEST_BUDGET),
        retrieved: hits
            .iter()
            .map(|h| Passage {
                chunk: h.chunk.chunk_ref(),
                token_span: h.chunk.token_span,
                text: h.chunk.text.clone(),
            })
            .collect(),
        user_turn: user_message.to_owned(),
    };

    let completion = match gateway.complete(&bundle, &state.profile) {
        Ok(c) => c,
        Err(GatewayError::ContextOversize { count, budget }) => {
            state.round = round;
            state.transcript.push(Turn {
                role: Role::Designer,
                text: user_message.to_owned(),
            });
            state.traces.push(RoundTrace {
                round,
                stage,
                query,
                retrieved: Vec::new(),
                prompt_tokens: count,
                completion_tokens: 0,
                reply: String::new(),
                facts_collected: Vec::new(),
            });
            state.fail(FailureReason::ContextOversize);
            return Err(AgentError::ContextOversize {
                round,
                count,
                budget,
            });
        }
        Err(e) => return Err(AgentError::Gateway(e)),
    };
    let reply = completion.text;

    let missing: BTreeSet<u32> = state.missing_facts().map(|f| f.id).collect();
    let mut new_facts: Vec<u32> = fact_claims(&reply)
        .into_iter()
        .filter(|id| missing.contains(id))
        .collect();
    new_facts.sort_unstable();
    new_facts.dedup();

    state.memory.append(MemoryRecord {
        round,
        observation: user_message.to_owned(),
        thought: thought_line(&reply).unwrap_or_default().to_owned(),
        action: reply.clone(),
        stage,
    })?;
    state.facts_collected.extend(new_facts.iter().copied());
    state.transcript.push(Turn {
        role: Role::Designer,
        text: user_message.to_owned(),
    });
    state.transcript.push(Turn {
        role: Role::Agent,
        text: reply.clone(),
    });
    state.round = round;
    state.stage = (template.advance_rule)(state, &reply);
    if state.stage != Stage::Done && state.round >= MAX_ROUNDS {
        state.fail(FailureReason::MaxRounds);
    }

    let trace = RoundTrace {
        round,
        stage,
        query,
        retrieved,
        prompt_tokens: completion.prompt_tokens,
        completion_tokens: completion.completion_tokens,
        reply,
        facts_collected: new_facts,
    };
    state.traces.push(trace.clone());
    Ok(trace)
}

/// Produces the designer's next message.
pub trait Designer {
    fn message(&self, state: &SessionState) -> String;
}

impl<F: Fn(&SessionState) -> String> Designer for F {
    fn message(&self, state: &SessionState) -> String {
        self(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoOutcome {
    pub status: AutoStatus,
    pub rounds: u32,
    pub failure_reason: Option<FailureReason>,
    pub formulation_text: Option<String>,
    pub state: SessionState,
}

/// Drives `advance` with designer messages until the session is terminal.
/// Ingest and oversize failures end the run with a FAILED outcome; backend
/// errors are returned.
pub fn run_auto(
    gateway: &Gateway,
    index: Option<&KnowledgeIndex>,
    mut state: SessionState,
    designer: &dyn Designer,
) -> Result<AutoOutcome, AgentError> {
    while !state.stage.is_terminal() {
        let msg = designer.message(&state);
        match advance(gateway, index, &mut state, &msg) {
            Ok(_) => {}
            Err(AgentError::ContextOversize { .. }) | Err(AgentError::Ingest(_)) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(AutoOutcome {
        status: if state.stage == Stage::Done {
            AutoStatus::Done
        } else {
            AutoStatus::Failed
        },
        rounds: state.round,
        failure_reason: state.failure_reason,
        formulation_text: state.formulation_text(),
        state,
    })
}
