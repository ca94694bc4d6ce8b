use super::{count_tokens, KbError, TokenSpan};

/// Smallest accepted chunk size, in tokens.
pub const MIN_CHUNK_SIZE: usize = 50;

/// One chunk's text and its token span within the source document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPiece {
    pub text: String,
    pub token_span: TokenSpan,
}

/// A sentence (or a hard-split piece of an overlong sentence) together with
/// its cumulative token offset.
struct Segment<'a> {
    text: &'a str,
    start: usize,
    tokens: usize,
}

/// Splits `text` after sentence terminators (`.`, `!`, `?`, newline); the
/// whitespace that follows a terminator stays with the sentence it closes.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?' | '\n') {
            let mut end = None;
            while let Some(&(j, n)) = chars.peek() {
                if n.is_whitespace() {
                    chars.next();
                } else {
                    end = Some(j);
                    break;
                }
            }
            let end = end.unwrap_or(text.len());
            if end > start {
                out.push(&text[start..end]);
                start = end;
            }
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// Sentences, with any sentence longer than `max_tokens` cut into pieces of
/// exactly `max_tokens` tokens (the last piece may be shorter).
fn segments(text: &str, max_tokens: usize) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for sentence in sentences(text) {
        let tokens = count_tokens(sentence);
        if tokens <= max_tokens {
            out.push(Segment {
                text: sentence,
                start: offset,
                tokens,
            });
            offset += tokens;
            continue;
        }
        let max_chars = max_tokens * 4;
        let mut rest = sentence;
        while !rest.is_empty() {
            let cut = rest
                .char_indices()
                .nth(max_chars)
                .map(|(i, _)| i)
                .unwrap_or(rest.len());
            let (piece, tail) = rest.split_at(cut);
            let tokens = count_tokens(piece);
            out.push(Segment {
                text: piece,
                start: offset,
                tokens,
            });
            offset += tokens;
            rest = tail;
        }
    }
    out
}

/// Greedy sequential split of `body` into chunks of at most `chunk_size`
/// tokens, cutting at sentence boundaries where possible.
///
/// Token offsets are cumulative per-sentence token counts, so the spans of
/// consecutive chunks tile the document and concatenating the chunk texts
/// reproduces `body` exactly.
pub fn split_into_chunks(body: &str, chunk_size: usize) -> Result<Vec<ChunkPiece>, KbError> {
    split_with_overlap(body, chunk_size, 0)
}

/// Like [`split_into_chunks`], but each chunk after the first re-includes
/// trailing sentences of its predecessor totalling at most `overlap` tokens.
pub fn split_with_overlap(
    body: &str,
    chunk_size: usize,
    overlap: usize,
) -> Result<Vec<ChunkPiece>, KbError> {
    if chunk_size < MIN_CHUNK_SIZE {
        return Err(KbError::ChunkSizeTooSmall {
            chunk_size,
            min: MIN_CHUNK_SIZE,
        });
    }
    let overlap = overlap.min(chunk_size / 2);
    let segs = segments(body, chunk_size);
    let mut pieces = Vec::new();
    let mut first = 0;
    while first < segs.len() {
        let mut last = first;
        let mut used = segs[first].tokens;
        while last + 1 < segs.len() && used + segs[last + 1].tokens <= chunk_size {
            last += 1;
            used += segs[last].tokens;
        }
        let start = segs[first].start;
        let end = segs[last].start + segs[last].tokens;
        let text: String = segs[first..=last].iter().map(|s| s.text).collect();
        pieces.push(ChunkPiece {
            text,
            token_span: TokenSpan::new(start, end),
        });
        if last + 1 >= segs.len() {
            break;
        }
        // Carry trailing sentences back, but always make progress.
        let mut next = last + 1;
        let mut carried = 0;
        while next > first + 1 && carried + segs[next - 1].tokens <= overlap {
            next -= 1;
            carried += segs[next].tokens;
        }
        first = next;
    }
    Ok(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(n_chars: usize) -> String {
        let mut s = "a".repeat(n_chars - 2);
        s.push_str(". ");
        s
    }

    #[test]
    fn rejects_tiny_chunks() {
        assert!(matches!(
            split_into_chunks("hello.", 49),
            Err(KbError::ChunkSizeTooSmall { chunk_size: 49, .. })
        ));
        assert!(split_into_chunks("hello.", 50).is_ok());
    }

    #[test]
    fn short_document_is_one_chunk() {
        let body: String = (0..60).map(|_| sentence(40)).collect();
        assert_eq!(crate::kb::count_tokens(&body), 600);
        let chunks = split_into_chunks(&body, 1000).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, body);
        assert_eq!(chunks[0].token_span, TokenSpan::new(0, 600));
    }

    #[test]
    fn empty_document_has_no_chunks() {
        assert!(split_into_chunks("", 100).unwrap().is_empty());
    }

    #[test]
    fn aligned_sentences_give_exact_boundaries() {
        let body: String = (0..250).map(|_| sentence(40)).collect();
        let chunks = split_into_chunks(&body, 1000).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| (c.token_span.start, c.token_span.end)).collect();
        assert_eq!(spans, vec![(0, 1000), (1000, 2000), (2000, 2500)]);
    }

    #[test]
    fn sentence_boundaries_are_respected() {
        // 7-token sentences never straddle a chunk boundary.
        let body: String = (0..40).map(|_| sentence(28)).collect();
        for c in split_into_chunks(&body, 50).unwrap() {
            assert!(c.text.ends_with(". "));
            assert!(c.token_span.len() <= 50);
            assert_eq!(c.token_span.len() % 7, 0);
        }
    }

    #[test]
    fn overlong_sentence_is_hard_split() {
        let body = "x".repeat(1000);
        let chunks = split_into_chunks(&body, 60).unwrap();
        assert_eq!(chunks.len(), 5);
        assert!(chunks.iter().all(|c| c.token_span.len() <= 60));
        assert_eq!(chunks.iter().map(|c| c.text.as_str()).collect::<String>(), body);
    }

    #[test]
    fn newline_terminates_sentences() {
        let s = sentences("first line\nsecond one! third? fourth");
        assert_eq!(s, vec!["first line\n", "second one! ", "third? ", "fourth"]);
    }

    #[test]
    fn overlap_repeats_trailing_sentences() {
        let body: String = (0..30).map(|_| sentence(40)).collect();
        let chunks = split_with_overlap(&body, 100, 20).unwrap();
        assert_eq!(chunks[0].token_span, TokenSpan::new(0, 100));
        assert_eq!(chunks[1].token_span, TokenSpan::new(80, 180));
        assert!(chunks.iter().all(|c| c.token_span.len() <= 100));
        assert_eq!(chunks.last().unwrap().token_span.end, 300);
    }
}
