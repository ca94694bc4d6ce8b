use super::{count_tokens, KbError};

pub const EMBEDDING_DIM: usize = 256;

/// Largest input, in tokens, the embedder accepts.
pub const EMBEDDER_LIMIT: usize = 4500;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric word tokens of `text`.
pub fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// Coordinate and sign a (lowercased) word hashes to.
pub fn feature_slot(word: &str) -> (usize, f64) {
    let h = fnv1a(word.as_bytes());
    let slot = (h % EMBEDDING_DIM as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    (slot, sign)
}

/// Signed feature-hashing embedding, L2-normalised. Empty (or word-free)
/// text maps to the zero vector.
pub fn embed(text: &str) -> Result<Vec<f64>, KbError> {
    let tokens = count_tokens(text);
    if tokens > EMBEDDER_LIMIT {
        return Err(KbError::EmbedderOversize {
            tokens,
            limit: EMBEDDER_LIMIT,
            chunk: None,
        });
    }
    let mut v = vec![0.0; EMBEDDING_DIM];
    for word in word_tokens(text) {
        let (slot, sign) = feature_slot(&word);
        v[slot] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

/// Dot product; equals the cosine for unit vectors and is 0 when either
/// side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
