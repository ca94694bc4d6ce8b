//! Random corpora and an exhaustive ranking oracle for retrieval tests.

use formulink_core::kb::{embed, Document, KnowledgeIndex};
use rand::seq::IndexedRandom;
use rand::Rng;

const WORDS: &[&str] = &[
    "beam", "phase", "surface", "energy", "harvest", "rate", "split", "common", "private",
    "stream", "power", "budget", "user", "antenna", "channel", "noise", "ratio", "decode",
    "reflect", "element", "signal", "matrix", "vector", "sum", "min", "max", "bound",
];

fn sentence(rng: &mut impl Rng) -> String {
    let n = rng.random_range(3..12);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    format!("{}. ", words.join(" "))
}

/// Documents that chunk into at most `max_chunks` pieces at chunk size 50.
/// Some documents are exact copies of earlier ones so equal scores occur.
pub fn random_corpus(rng: &mut impl Rng, max_chunks: usize) -> Vec<Document> {
    let target_tokens = rng.random_range(1..=max_chunks) * 30;
    let mut docs: Vec<Document> = Vec::new();
    let mut total = 0;
    while total < target_tokens {
        let id = format!("d{}", docs.len());
        let doc = if !docs.is_empty() && rng.random_bool(0.2) {
            let src = docs.choose(rng).unwrap();
            Document::new(id, "copy", src.body.clone())
        } else {
            let body: String = (0..rng.random_range(1..40)).map(|_| sentence(rng)).collect();
            Document::new(id, "random", body)
        };
        total += doc.token_count;
        docs.push(doc);
    }
    docs
}

pub fn random_query(rng: &mut impl Rng) -> String {
    (0..rng.random_range(1..6))
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Scores every chunk, sorts by descending score then index position and
/// keeps the first `k`.
pub fn brute_force_top_k(index: &KnowledgeIndex, query: &str, k: usize) -> Vec<(usize, f64)> {
    let q = embed(query).unwrap();
    let mut all: Vec<(usize, f64)> = index
        .chunks
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut dot = 0.0;
            for d in 0..q.len() {
                dot += q[d] * c.embedding[d];
            }
            (i, dot)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}
