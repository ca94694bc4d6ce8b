//! Append-only record of past observations, thoughts and actions, with a
//! token-bounded recency digest for prompt inclusion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Stage;
use crate::kb::count_tokens;

/// Default digest budget in tokens.
pub const DIGEST_BUDGET: usize = 600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub round: u32,
    /// What the designer said.
    pub observation: String,
    /// The agent's self-reported reasoning line.
    pub thought: String,
    /// The agent's reply.
    pub action: String,
    pub stage: Stage,
}

impl MemoryRecord {
    /// `round N [STAGE]: observation | action`, flattened to one line.
    pub fn digest_line(&self) -> String {
        format!(
            "round {} [{}]: {} | {}",
            self.round,
            self.stage,
            flatten(&self.observation),
            flatten(&self.action)
        )
    }
}

fn flatten(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("record for round {got} appended where round {expected} was expected")]
    NonMonotoneRound { expected: u32, got: u32 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMemory {
    records: Vec<MemoryRecord>,
}

impl SessionMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_round(&self) -> u32 {
        self.records.last().map_or(0, |r| r.round)
    }

    pub fn append(&mut self, record: MemoryRecord) -> Result<(), MemoryError> {
        let expected = self.last_round() + 1;
        if record.round != expected {
            return Err(MemoryError::NonMonotoneRound {
                expected,
                got: record.round,
            });
        }
        self.records.push(record);
        Ok(())
    }

    /// Newest-first digest lines, stopping before the first line that would
    /// push the digest over `budget` tokens.
    pub fn digest(&self, budget: usize) -> String {
        let mut out = String::new();
        for record in self.records.iter().rev() {
            let line = record.digest_line();
            let candidate = if out.is_empty() {
                line
            } else {
                format!("{out}\n{line}")
            };
            if count_tokens(&candidate) > budget {
                break;
            }
            out = candidate;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u32, len: usize) -> MemoryRecord {
        MemoryRecord {
            round,
            observation: format!("designer message {round}"),
            thought: "thinking".into(),
            action: format!("reply {round} {}", "x".repeat(len)),
            stage: Stage::ConstraintGathering,
        }
    }

    #[test]
    fn append_checks_rounds() {
        let mut m = SessionMemory::new();
        m.append(record(1, 0)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(
            m.append(record(3, 0)),
            Err(MemoryError::NonMonotoneRound { expected: 2, got: 3 })
        );
        assert_eq!(
            SessionMemory::new().append(record(2, 0)),
            Err(MemoryError::NonMonotoneRound { expected: 1, got: 2 })
        );
    }

    #[test]
    fn empty_digest() {
        assert_eq!(SessionMemory::new().digest(DIGEST_BUDGET), "");
    }

    #[test]
    fn small_memory_fully_included() {
        let mut m = SessionMemory::new();
        for r in 1..=3 {
            m.append(record(r, 10)).unwrap();
        }
        let d = m.digest(DIGEST_BUDGET);
        for r in m.records() {
            assert!(d.contains(&r.digest_line()));
        }
        assert!(d.starts_with("round 3 "));
    }

    #[test]
    fn ten_records_newest_first() {
        let mut m = SessionMemory::new();
        for r in 1..=10 {
            m.append(record(r, 5)).unwrap();
        }
        let d = m.digest(DIGEST_BUDGET);
        let rounds: Vec<u32> = d
            .lines()
            .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(rounds, (1..=10).rev().collect::<Vec<_>>());
    }

    #[test]
    fn long_memory_respects_budget() {
        let mut m = SessionMemory::new();
        for r in 1..=50 {
            m.append(record(r, 300)).unwrap();
        }
        let d = m.digest(DIGEST_BUDGET);
        assert!(count_tokens(&d) <= DIGEST_BUDGET);
        assert!(d.starts_with(&m.records().last().unwrap().digest_line()));
        // Oldest lines are the ones dropped.
        assert!(!d.contains("round 1 ["));
        let kept = d.lines().count();
        assert!(kept > 1 && kept < 50);
    }

    #[test]
    fn oversized_latest_gives_empty_digest() {
        let mut m = SessionMemory::new();
        m.append(record(1, 10)).unwrap();
        m.append(record(2, 5000)).unwrap();
        assert_eq!(m.digest(DIGEST_BUDGET), "");
    }
}
