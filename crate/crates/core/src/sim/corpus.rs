//! Synthetic evaluation corpus with planted fact blocks.
//!
//! Every sentence is exactly 40 characters (10 tokens), so chunk boundaries
//! fall on exact multiples of the chunk size and the layout below maps to
//! chunks arithmetically. Core terms hash to embedding slots that no filler
//! word uses, which makes retrieval scores depend only on core-term counts
//! and the chunk norms.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{FactTarget, Stage};
use crate::kb::{feature_slot, Document, TokenSpan};

pub const SHIPPED_SEED: u64 = 7;
pub const CORPUS_DOC_ID: &str = "corpus";

pub const SENTENCE_CHARS: usize = 40;
pub const SENTENCE_TOKENS: usize = SENTENCE_CHARS / 4;
pub const BLOCK_TOKENS: usize = 600;
pub const CORE_TOKENS: usize = 60;
pub const CORE_TERMS: usize = 6;
pub const PREAMBLE_TOKENS: usize = 2000;
pub const MIN_JUNCTION: usize = 30;
pub const MAX_JUNCTION: usize = 80;
/// Junction between the blocks of a triplet and between tail blocks.
pub const DEFAULT_JUNCTION: usize = 50;
pub const TAIL_BLOCKS: usize = 8;
/// Core-term mentions in an echo block.
pub const ECHO_MENTIONS: usize = 26;
/// Offset of a triplet's middle core inside its block; puts the core across
/// a 1000-token chunk boundary.
pub const MIDDLE_CORE_OFFSET: usize = 320;

/// Needed triplets: (start, stage, kinds). Ids are assigned in this order.
const TRIPLETS: [(usize, Stage, [&str; 3]); 2] = [
    (6000, Stage::Scenario, ["power_budget", "unit_modulus", "ps_ratio_range"]),
    (18000, Stage::Objective, ["qos_rate", "energy_harvest", "rsma_common_rate"]),
];

/// Echo blocks: (start, index into TRIPLETS).
const ECHOES: [(usize, usize); 6] = [
    (2000, 1),
    (10000, 0),
    (14000, 0),
    (16000, 1),
    (22000, 0),
    (24000, 1),
];

const DECOY_KINDS: [&str; 6] = [
    "power_budget",
    "qos_rate",
    "energy_harvest",
    "rsma_common_rate",
    "unit_modulus",
    "ps_ratio_range",
];

const FILLER_WORDS: &[&str] = &[
    "of", "to", "in", "is", "on", "by", "at", "as", "an", "or", "it", "be", "we",
    "the", "and", "for", "are", "can", "its", "may", "how", "all", "use", "via", "new", "two",
    "per", "low", "one", "set", "key",
    "each", "this", "that", "with", "from", "when", "more", "link", "cell", "path", "gain",
    "loss", "node", "time", "user", "data", "band", "load", "slot", "flow", "base", "wave",
    "term", "form", "case", "many",
    "model", "field", "noise", "delay", "layer", "local", "radio", "range", "cells", "links",
    "users", "study", "works", "under", "often", "given", "these", "which", "their", "while",
    "where",
    "signal", "design", "system", "scheme", "method", "uplink", "access", "values", "stream",
    "simple", "result", "should", "across", "mobile", "tuning",
    "network", "channel", "antenna", "traffic", "service", "between", "through", "improve",
    "general", "spatial", "typical", "receive", "surface",
    "wireless", "spectrum", "receiver", "strategy", "baseline", "feedback", "coverage",
    "capacity", "deployed", "resource",
    "bandwidth", "allocated", "operators", "algorithm", "practical", "scheduler", "frequency",
    "component", "reference",
    "throughput", "additional", "considered", "allocation", "deployment", "simulation",
    "controller", "connection",
];

const SYLLABLES: &[&str] = &[
    "zor", "vek", "lin", "tha", "mur", "qen", "dax", "pol", "ryn", "sev", "kai", "bru", "fio",
    "gal", "wex", "nim", "tor", "jul", "hes", "oru", "pax", "zim", "cly", "dro",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role", content = "stage")]
pub enum FactRole {
    /// Part of the scenario; collected during the given stage.
    Needed(Stage),
    /// Same kind catalog, different scenario; never asked for.
    Decoy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSpec {
    pub fact_id: u32,
    pub kind: String,
    pub role: FactRole,
    pub core_terms: Vec<String>,
    pub core_span: TokenSpan,
    pub block_span: TokenSpan,
}

impl FactSpec {
    pub fn block_offset(&self) -> usize {
        self.block_span.start
    }

    pub fn is_needed(&self) -> bool {
        matches!(self.role, FactRole::Needed(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "of")]
pub enum BlockRole {
    Fact(u32),
    /// Mentions one needed triplet's core terms without stating any fact.
    Echo(u32),
    Filler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutBlock {
    pub role: BlockRole,
    pub span: TokenSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPlan {
    pub seed: u64,
    pub facts: Vec<FactSpec>,
    /// Every 600-token block in document order.
    pub layout: Vec<LayoutBlock>,
    pub preamble_tokens: usize,
    pub total_tokens: usize,
}

impl CorpusPlan {
    pub fn distractor_count(&self) -> usize {
        self.layout
            .iter()
            .filter(|b| !matches!(b.role, BlockRole::Fact(_)))
            .count()
    }

    pub fn needed_facts(&self) -> impl Iterator<Item = &FactSpec> {
        self.facts.iter().filter(|f| f.is_needed())
    }

    pub fn fact(&self, id: u32) -> Option<&FactSpec> {
        self.facts.iter().find(|f| f.fact_id == id)
    }

    /// Needed facts in the form the agent consumes.
    pub fn fact_targets(&self) -> Vec<FactTarget> {
        self.facts
            .iter()
            .filter_map(|f| match f.role {
                FactRole::Needed(stage) => Some(FactTarget {
                    id: f.fact_id,
                    kind: f.kind.clone(),
                    stage,
                    core_terms: f.core_terms.clone(),
                }),
                FactRole::Decoy => None,
            })
            .collect()
    }
}

/// Junction lengths for `n` blocks in a gap: `n + 1` junctions, each a
/// multiple of the sentence length within [MIN_JUNCTION, MAX_JUNCTION].
fn fill_gap(gap: usize) -> (usize, Vec<usize>) {
    if gap == 0 {
        return (0, Vec::new());
    }
    let mut n = 0;
    while (n + 1) * BLOCK_TOKENS + (n + 2) * MIN_JUNCTION <= gap {
        n += 1;
    }
    let junctions = n + 1;
    let units = (gap - n * BLOCK_TOKENS) / SENTENCE_TOKENS;
    let (base, extra) = (units / junctions, units % junctions);
    let lens: Vec<usize> = (0..junctions)
        .map(|i| (base + usize::from(i < extra)) * SENTENCE_TOKENS)
        .collect();
    assert_eq!(n * BLOCK_TOKENS + lens.iter().sum::<usize>(), gap);
    assert!(
        lens.iter().all(|&l| (MIN_JUNCTION..=MAX_JUNCTION).contains(&l)),
        "gap of {gap} tokens cannot be filled with junctions in range"
    );
    (n, lens)
}

enum Segment {
    Filler(usize),
    Block(usize),
}

/// Block layout of the shipped plan, before roles are assigned to fill slots.
fn skeleton() -> (Vec<Segment>, Vec<(usize, BlockRole)>) {
    enum Anchor {
        Triplet(usize),
        Echo(usize),
    }
    let mut anchors: Vec<(usize, Anchor)> = TRIPLETS
        .iter()
        .enumerate()
        .map(|(i, t)| (t.0, Anchor::Triplet(i)))
        .chain(ECHOES.iter().map(|&(at, t)| (at, Anchor::Echo(t))))
        .collect();
    anchors.sort_by_key(|a| a.0);

    let mut segs = vec![Segment::Filler(PREAMBLE_TOKENS)];
    let mut fixed = Vec::new();
    let mut cursor = PREAMBLE_TOKENS;
    let mut block_no = 0;
    let push_fill = |segs: &mut Vec<Segment>, gap: usize, block_no: &mut usize| {
        let (n, lens) = fill_gap(gap);
        for (i, l) in lens.iter().enumerate() {
            segs.push(Segment::Filler(*l));
            if i < n {
                segs.push(Segment::Block(*block_no));
                *block_no += 1;
            }
        }
    };
    for (start, anchor) in anchors {
        assert!(start >= cursor, "anchors overlap");
        push_fill(&mut segs, start - cursor, &mut block_no);
        match anchor {
            Anchor::Triplet(t) => {
                for j in 0..3 {
                    if j > 0 {
                        segs.push(Segment::Filler(DEFAULT_JUNCTION));
                    }
                    segs.push(Segment::Block(block_no));
                    fixed.push((block_no, BlockRole::Fact((t * 3 + j + 1) as u32)));
                    block_no += 1;
                }
                cursor = start + 3 * BLOCK_TOKENS + 2 * DEFAULT_JUNCTION;
            }
            Anchor::Echo(t) => {
                segs.push(Segment::Block(block_no));
                fixed.push((block_no, BlockRole::Echo(t as u32)));
                block_no += 1;
                cursor = start + BLOCK_TOKENS;
            }
        }
    }
    for _ in 0..TAIL_BLOCKS {
        segs.push(Segment::Filler(DEFAULT_JUNCTION));
        segs.push(Segment::Block(block_no));
        block_no += 1;
    }
    segs.push(Segment::Filler(DEFAULT_JUNCTION));
    (segs, fixed)
}

struct Words {
    by_len: BTreeMap<usize, Vec<&'static str>>,
}

impl Words {
    fn new() -> Self {
        let mut by_len: BTreeMap<usize, Vec<&'static str>> = BTreeMap::new();
        for w in FILLER_WORDS {
            by_len.entry(w.len()).or_default().push(w);
        }
        Self { by_len }
    }

    fn max_len(&self) -> usize {
        *self.by_len.keys().next_back().unwrap()
    }

    /// One sentence of exactly SENTENCE_CHARS characters containing
    /// `required` (in random positions) padded with filler words.
    fn sentence(&self, rng: &mut ChaCha8Rng, required: &[&str]) -> String {
        let content = SENTENCE_CHARS - 2;
        let mut words: Vec<&str> = required.to_vec();
        let mut used: isize = if words.is_empty() {
            -1
        } else {
            words.iter().map(|w| w.len() as isize + 1).sum::<isize>() - 1
        };
        loop {
            let need = content as isize - used;
            if need == 0 {
                break;
            }
            let exact = (need - 1) as usize;
            if let Some(ws) = self.by_len.get(&exact) {
                words.push(ws.choose(rng).unwrap());
                break;
            }
            let hi = self.max_len().min((need - 4) as usize);
            assert!(hi >= 2, "cannot pad sentence");
            let len = rng.random_range(2..=hi);
            let ws = &self.by_len[&len];
            words.push(ws.choose(rng).unwrap());
            used += len as isize + 1;
        }
        words.shuffle(rng);
        let mut s = words.join(" ");
        if let Some(first) = s.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        s.push_str(". ");
        debug_assert_eq!(s.len(), SENTENCE_CHARS);
        s
    }

    fn filler(&self, rng: &mut ChaCha8Rng, tokens: usize, out: &mut String) {
        for _ in 0..tokens / SENTENCE_TOKENS {
            out.push_str(&self.sentence(rng, &[]));
        }
    }
}

/// 6 distinct synthetic words per fact, each in its own embedding slot and
/// clear of every slot a filler word uses.
fn core_terms(rng: &mut ChaCha8Rng, count: usize) -> Vec<Vec<String>> {
    let mut taken: HashSet<usize> = FILLER_WORDS.iter().map(|w| feature_slot(w).0).collect();
    let filler: HashSet<&str> = FILLER_WORDS.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut terms = Vec::with_capacity(CORE_TERMS);
        while terms.len() < CORE_TERMS {
            let n = rng.random_range(2..=3);
            let word: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            let slot = feature_slot(&word).0;
            if filler.contains(word.as_str()) || seen.contains(&word) || taken.contains(&slot) {
                continue;
            }
            taken.insert(slot);
            seen.insert(word.clone());
            terms.push(word);
        }
        out.push(terms);
    }
    out
}

/// Builds the plan and the corpus text for `seed`.
pub fn generate_corpus(seed: u64) -> (Document, CorpusPlan) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = Words::new();
    let (segs, fixed) = skeleton();
    let n_blocks = segs.iter().filter(|s| matches!(s, Segment::Block(_))).count();

    let mut roles = vec![BlockRole::Filler; n_blocks];
    for &(b, role) in &fixed {
        roles[b] = role;
    }
    let mut free: Vec<usize> = (0..n_blocks)
        .filter(|&b| !fixed.iter().any(|f| f.0 == b))
        .collect();
    free.shuffle(&mut rng);
    let mut decoy_slots: Vec<usize> = free[..DECOY_KINDS.len()].to_vec();
    decoy_slots.sort_unstable();
    let first_decoy = (TRIPLETS.len() * 3 + 1) as u32;
    for (i, &b) in decoy_slots.iter().enumerate() {
        roles[b] = BlockRole::Fact(first_decoy + i as u32);
    }

    let terms = core_terms(&mut rng, TRIPLETS.len() * 3 + DECOY_KINDS.len());
    let fact_meta = |id: u32| -> (String, FactRole) {
        let i = (id - 1) as usize;
        if i < TRIPLETS.len() * 3 {
            let (_, stage, kinds) = TRIPLETS[i / 3];
            (kinds[i % 3].to_owned(), FactRole::Needed(stage))
        } else {
            (DECOY_KINDS[i - TRIPLETS.len() * 3].to_owned(), FactRole::Decoy)
        }
    };

    let mut body = String::new();
    let mut offset = 0;
    let mut layout = Vec::with_capacity(n_blocks);
    let mut facts = Vec::new();
    for seg in &segs {
        match *seg {
            Segment::Filler(tokens) => {
                words.filler(&mut rng, tokens, &mut body);
                offset += tokens;
            }
            Segment::Block(b) => {
                let span = TokenSpan::new(offset, offset + BLOCK_TOKENS);
                let role = roles[b];
                let sentences = BLOCK_TOKENS / SENTENCE_TOKENS;
                let mut mentions: Vec<Vec<&str>> = vec![Vec::new(); sentences];
                match role {
                    BlockRole::Fact(id) => {
                        let t = &terms[(id - 1) as usize];
                        let is_middle = id <= (TRIPLETS.len() * 3) as u32 && id % 3 == 2;
                        let core_off = if is_middle {
                            MIDDLE_CORE_OFFSET
                        } else {
                            rng.random_range(0..=(BLOCK_TOKENS - CORE_TOKENS) / SENTENCE_TOKENS)
                                * SENTENCE_TOKENS
                        };
                        let first = core_off / SENTENCE_TOKENS;
                        for j in 0..CORE_TERMS {
                            mentions[first + j] =
                                vec![t[j].as_str(), t[(j + 1) % CORE_TERMS].as_str()];
                        }
                        let (kind, frole) = fact_meta(id);
                        facts.push(FactSpec {
                            fact_id: id,
                            kind,
                            role: frole,
                            core_terms: t.clone(),
                            core_span: TokenSpan::new(
                                offset + core_off,
                                offset + core_off + CORE_TOKENS,
                            ),
                            block_span: span,
                        });
                    }
                    BlockRole::Echo(t) => {
                        let pool: Vec<&str> = terms[t as usize * 3..t as usize * 3 + 3]
                            .iter()
                            .flatten()
                            .map(String::as_str)
                            .collect();
                        let start = rng.random_range(0..pool.len());
                        let mut slots: Vec<usize> = (0..sentences).collect();
                        slots.shuffle(&mut rng);
                        for (m, &s) in slots[..ECHO_MENTIONS / 2].iter().enumerate() {
                            mentions[s] = vec![
                                pool[(start + 2 * m) % pool.len()],
                                pool[(start + 2 * m + 1) % pool.len()],
                            ];
                        }
                    }
                    BlockRole::Filler => {}
                }
                for m in &mentions {
                    body.push_str(&words.sentence(&mut rng, m));
                }
                layout.push(LayoutBlock { role, span });
                offset += BLOCK_TOKENS;
            }
        }
    }
    facts.sort_by_key(|f| f.fact_id);

    let plan = CorpusPlan {
        seed,
        facts,
        layout,
        preamble_tokens: PREAMBLE_TOKENS,
        total_tokens: offset,
    };
    let doc = Document::new(
        CORPUS_DOC_ID,
        "Synthetic survey of RIS-assisted SWIPT networks with RSMA",
        body,
    );
    (doc, plan)
}
