//! Offline evaluation world: the synthetic corpus, the fact extraction rule,
//! and a scripted backend and designer that stand in for the hosted model
//! and the human network designer.

mod corpus;

use std::collections::{BTreeMap, BTreeSet};

pub use corpus::{
    generate_corpus, BlockRole, CorpusPlan, FactRole, FactSpec, LayoutBlock, BLOCK_TOKENS,
    CORE_TERMS, CORE_TOKENS, CORPUS_DOC_ID, DEFAULT_JUNCTION, ECHO_MENTIONS, MAX_JUNCTION,
    MIDDLE_CORE_OFFSET, MIN_JUNCTION, PREAMBLE_TOKENS, SENTENCE_CHARS, SENTENCE_TOKENS,
    SHIPPED_SEED, TAIL_BLOCKS,
};

use crate::agent::{SessionState, Stage};
use crate::formulation::{ground_truth, OptimizationFormulation};
use crate::gateway::{split_sections, CompletionBackend, CompletionRequest, GatewayError};
use crate::kb::TokenSpan;

/// A fact is covered when the retrieved spans cover at least this share of
/// its block.
pub const COVERAGE_PERCENT: usize = 90;
/// A fact is legible when one retrieved chunk has at least this share of its
/// tokens inside the fact's block.
pub const DENSITY_PERCENT: usize = 16;

/// How a fact's block is seen through a set of retrieved spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visibility {
    /// Block tokens inside the union of the spans.
    pub covered: usize,
    /// Whether one span is dense enough in the block.
    pub dense: bool,
}

impl Visibility {
    pub fn of(spans: &[TokenSpan], block: TokenSpan) -> Self {
        let mut parts: Vec<(usize, usize)> = spans
            .iter()
            .map(|s| (s.start.max(block.start), s.end.min(block.end)))
            .filter(|(a, b)| a < b)
            .collect();
        parts.sort_unstable();
        let mut covered = 0;
        let mut reach = block.start;
        for (a, b) in parts {
            let a = a.max(reach);
            if b > a {
                covered += b - a;
                reach = b;
            }
        }
        let dense = spans
            .iter()
            .any(|s| !s.is_empty() && s.overlap(&block) * 100 >= DENSITY_PERCENT * s.len());
        Self { covered, dense }
    }

    fn is_covered(&self, block: TokenSpan) -> bool {
        self.covered * 100 >= COVERAGE_PERCENT * block.len()
    }
}

/// Facts both covered and legible through `spans`.
pub fn extractable_facts(spans: &[TokenSpan], facts: &[FactSpec]) -> BTreeSet<u32> {
    facts
        .iter()
        .filter(|f| {
            let v = Visibility::of(spans, f.block_span);
            v.is_covered(f.block_span) && v.dense
        })
        .map(|f| f.fact_id)
        .collect()
}

/// Facts covered by `spans` but too diluted to be read.
pub fn diluted_facts(spans: &[TokenSpan], facts: &[FactSpec]) -> BTreeSet<u32> {
    facts
        .iter()
        .filter(|f| {
            let v = Visibility::of(spans, f.block_span);
            v.is_covered(f.block_span) && !v.dense
        })
        .map(|f| f.fact_id)
        .collect()
}

/// The parts of a `[STATE]` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLine {
    pub stage: Stage,
    pub missing: BTreeSet<u32>,
    pub collected: BTreeSet<u32>,
}

fn parse_ids(s: &str) -> Option<BTreeSet<u32>> {
    if s == "-" {
        return Some(BTreeSet::new());
    }
    s.split(',').map(|x| x.parse().ok()).collect()
}

pub fn parse_state_line(text: &str) -> Option<StateLine> {
    let line = text.lines().find_map(|l| l.trim().strip_prefix("[STATE]"))?;
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for part in line.split_whitespace() {
        let (k, v) = part.split_once('=')?;
        fields.insert(k, v);
    }
    Some(StateLine {
        stage: fields.get("stage")?.parse().ok()?,
        missing: parse_ids(fields.get("missing")?)?,
        collected: parse_ids(fields.get("collected")?)?,
    })
}

/// `(doc id, token span)` of every `[doc#i tokens a-b]` header line.
pub fn parse_passage_headers(knowledge: &str) -> Vec<(String, TokenSpan)> {
    knowledge
        .lines()
        .filter_map(|l| {
            let inner = l.strip_prefix('[')?.strip_suffix(']')?;
            let (chunk, range) = inner.split_once(" tokens ")?;
            let (doc, idx) = chunk.rsplit_once('#')?;
            idx.parse::<usize>().ok()?;
            let (a, b) = range.split_once('-')?;
            Some((doc.to_owned(), TokenSpan::new(a.parse().ok()?, b.parse().ok()?)))
        })
        .collect()
}

pub const REQUIREMENTS_REPLY: &str = "THOUGHT: I need the full problem context before \
formulating.\nPlease describe the system model, the optimization objective, the decision \
variables, and any necessary constraints.";

/// Ground truth restricted to the given constraint kinds.
pub fn formulation_for_kinds(kinds: &BTreeSet<String>) -> OptimizationFormulation {
    let mut f = ground_truth();
    f.constraints.retain(|c| kinds.contains(&c.kind));
    f
}

/// Deterministic stand-in for the hosted model. It reads the stage and the
/// missing facts from the prompt's `[STATE]` line and the retrieved spans
/// from the passage headers, then applies the extraction rule.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    doc_id: String,
    facts: Vec<FactSpec>,
}

impl ScriptedBackend {
    pub fn new(plan: &CorpusPlan) -> Self {
        Self {
            doc_id: CORPUS_DOC_ID.to_owned(),
            facts: plan.facts.clone(),
        }
    }

    /// The reply for an assembled prompt.
    pub fn reply(&self, prompt: &str) -> Result<String, GatewayError> {
        let [system, _, knowledge, _] = split_sections(prompt)
            .ok_or_else(|| GatewayError::MalformedReply("prompt sections not found".into()))?;
        let state = parse_state_line(system)
            .ok_or_else(|| GatewayError::MalformedReply("prompt has no [STATE] line".into()))?;
        let spans: Vec<TokenSpan> = parse_passage_headers(knowledge)
            .into_iter()
            .filter(|(doc, _)| *doc == self.doc_id)
            .map(|(_, s)| s)
            .collect();
        Ok(match state.stage {
            Stage::Requirements => REQUIREMENTS_REPLY.to_owned(),
            Stage::Formulate => {
                let kinds: BTreeSet<String> = self
                    .facts
                    .iter()
                    .filter(|f| state.collected.contains(&f.fact_id))
                    .map(|f| f.kind.clone())
                    .collect();
                format!(
                    "THOUGHT: Writing the problem from {} collected facts.\n{}",
                    state.collected.len(),
                    formulation_for_kinds(&kinds).serialize()
                )
            }
            Stage::Done | Stage::Failed => {
                return Err(GatewayError::MalformedReply(format!(
                    "no reply for terminal stage {}",
                    state.stage
                )))
            }
            _ => {
                let found: Vec<u32> = extractable_facts(&spans, &self.facts)
                    .intersection(&state.missing)
                    .copied()
                    .collect();
                let mut out = format!(
                    "THOUGHT: {} of {} missing facts are readable in {} passages.",
                    found.len(),
                    state.missing.len(),
                    spans.len()
                );
                for id in &found {
                    out.push_str(&format!("\nFACT: {id}"));
                }
                if found.len() < state.missing.len() {
                    out.push_str("\nWhich further constraints apply?");
                }
                out
            }
        })
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        self.reply(&request.prompt.text)
    }
}

/// Deterministic designer messages per stage.
pub fn scripted_designer(state: &SessionState) -> String {
    match state.stage {
        Stage::Requirements => "I need help formulating an optimization problem for my network.",
        Stage::Scenario => {
            "The scenario is a RIS-assisted SWIPT network with RSMA: a multi-antenna base \
             station serves single-antenna users through a reflecting surface."
        }
        Stage::Objective => "The objective is optimizing EE, the energy efficiency of the network.",
        Stage::ConstraintGathering => "Please look for the remaining constraints.",
        Stage::Formulate => "Please write the complete formulation.",
        Stage::Done | Stage::Failed => "",
    }
    .to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::{diff, parse_formulation};
    use crate::gateway::{assemble_prompt, Passage, PromptBundle};
    use crate::kb::ChunkRef;

    fn fact(id: u32, start: usize) -> FactSpec {
        FactSpec {
            fact_id: id,
            kind: "power_budget".into(),
            role: FactRole::Decoy,
            core_terms: vec![],
            core_span: TokenSpan::new(start, start + 60),
            block_span: TokenSpan::new(start, start + 600),
        }
    }

    #[test]
    fn whole_block_in_a_1000_chunk() {
        let f = [fact(1, 6000)];
        let s = [TokenSpan::new(6000, 7000)];
        assert_eq!(extractable_facts(&s, &f), BTreeSet::from([1]));
    }

    #[test]
    fn block_in_a_4000_chunk_is_diluted() {
        let f = [fact(1, 6000)];
        let s = [TokenSpan::new(4000, 8000)];
        assert!(extractable_facts(&s, &f).is_empty());
        assert_eq!(diluted_facts(&s, &f), BTreeSet::from([1]));
        // 600 / 3750 is exactly 16%.
        assert_eq!(extractable_facts(&[TokenSpan::new(4250, 8000)], &f), BTreeSet::from([1]));
    }

    #[test]
    fn split_block_needs_both_halves() {
        let f = [fact(1, 6650)];
        let left = TokenSpan::new(6000, 7000);
        let right = TokenSpan::new(7000, 8000);
        assert!(extractable_facts(&[left], &f).is_empty());
        assert!(diluted_facts(&[left], &f).is_empty());
        assert_eq!(extractable_facts(&[left, right], &f), BTreeSet::from([1]));
        // 540 of 600 tokens is exactly 90%.
        let partial = TokenSpan::new(6710, 7250);
        assert_eq!(Visibility::of(&[partial], f[0].block_span).covered, 540);
        assert_eq!(extractable_facts(&[partial], &f), BTreeSet::from([1]));
    }

    #[test]
    fn overlapping_spans_are_not_double_counted() {
        let block = TokenSpan::new(0, 600);
        let spans = [TokenSpan::new(0, 300), TokenSpan::new(100, 400), TokenSpan::new(350, 500)];
        assert_eq!(Visibility::of(&spans, block).covered, 500);
    }

    #[test]
    fn state_line_round_trip() {
        let s = parse_state_line("x\n[STATE] stage=CONSTRAINT_GATHERING missing=1,4 collected=-")
            .unwrap();
        assert_eq!(s.stage, Stage::ConstraintGathering);
        assert_eq!(s.missing, BTreeSet::from([1, 4]));
        assert!(s.collected.is_empty());
        assert!(parse_state_line("[STATE] stage=NOPE missing=- collected=-").is_none());
    }

    fn prompt(stage: Stage, missing: &str, collected: &str, spans: &[(usize, usize)]) -> String {
        let bundle = PromptBundle {
            system_text: format!("do it\n[STATE] stage={stage} missing={missing} collected={collected}"),
            memory_digest: String::new(),
            retrieved: spans
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| Passage {
                    chunk: ChunkRef {
                        doc_id: CORPUS_DOC_ID.into(),
                        index: i,
                    },
                    token_span: TokenSpan::new(a, b),
                    text: "text.".into(),
                })
                .collect(),
            user_turn: "hi".into(),
        };
        assemble_prompt(&bundle).text
    }

    #[test]
    fn requirements_reply_asks_for_the_four_parts() {
        let (_, plan) = generate_corpus(SHIPPED_SEED);
        let r = ScriptedBackend::new(&plan)
            .reply(&prompt(Stage::Requirements, "1", "-", &[]))
            .unwrap();
        assert!(r.contains(
            "the system model, the optimization objective, the decision variables, and any necessary constraints"
        ));
    }

    #[test]
    fn gathering_names_newly_extractable_missing_facts() {
        let (_, plan) = generate_corpus(SHIPPED_SEED);
        let b = ScriptedBackend::new(&plan);
        let r = b
            .reply(&prompt(Stage::Scenario, "1,2,3,4,5,6", "-", &[(6000, 8000)]))
            .unwrap();
        assert_eq!(crate::agent::fact_claims(&r), vec![1, 2, 3]);
        let r = b
            .reply(&prompt(Stage::Scenario, "3,4", "1,2", &[(6000, 8000)]))
            .unwrap();
        assert_eq!(crate::agent::fact_claims(&r), vec![3]);
    }

    #[test]
    fn formulate_with_all_facts_matches_ground_truth() {
        let (_, plan) = generate_corpus(SHIPPED_SEED);
        let r = ScriptedBackend::new(&plan)
            .reply(&prompt(Stage::Formulate, "-", "1,2,3,4,5,6", &[]))
            .unwrap();
        let f = parse_formulation(&r).unwrap();
        assert!(diff(&f, &ground_truth()).is_empty());
    }

    #[test]
    fn formulate_without_rsma_fact_misses_that_kind() {
        let (_, plan) = generate_corpus(SHIPPED_SEED);
        let rsma = plan
            .needed_facts()
            .find(|f| f.kind == "rsma_common_rate")
            .unwrap()
            .fact_id;
        let collected: Vec<String> = plan
            .needed_facts()
            .filter(|f| f.fact_id != rsma)
            .map(|f| f.fact_id.to_string())
            .collect();
        let r = ScriptedBackend::new(&plan)
            .reply(&prompt(Stage::Formulate, "-", &collected.join(","), &[]))
            .unwrap();
        let d = diff(&parse_formulation(&r).unwrap(), &ground_truth());
        assert_eq!(d.missing_kinds, BTreeSet::from(["rsma_common_rate".to_string()]));
        assert!(d.extra_kinds.is_empty() && d.variable_mismatches.is_empty() && d.objective_match);
    }

    #[test]
    fn designer_messages() {
        let mut s = crate::agent::start_session(
            "s",
            crate::gateway::ModelProfile::scripted(),
            crate::agent::IndexRef {
                label: "x".into(),
                chunk_size: 1000,
                ingest_error: None,
            },
            1,
            vec![],
        )
        .unwrap();
        s.stage = Stage::Scenario;
        assert!(scripted_designer(&s).contains("RIS-assisted SWIPT network with RSMA"));
        s.stage = Stage::Objective;
        assert!(scripted_designer(&s).contains("optimizing EE"));
        s.stage = Stage::Done;
        assert_eq!(scripted_designer(&s), "");
    }
}
