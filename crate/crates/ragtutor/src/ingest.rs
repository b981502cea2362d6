//! Document chunking: split source texts into overlapping, citable pieces.
//!
//! Token counts everywhere in the pipeline use the same 4-characters-per-token
//! estimate, so chunk budgets, prompt budgets, and benchmark fallbacks all
//! agree. Chunk boundaries are computed by character arithmetic and then
//! snapped to the nearest whitespace boundary at or before the target offset
//! (searching back at most [`BACKTRACK_CHARS`]), so words are not split while
//! whitespace is available nearby.

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use crate::config::RuntimeConfig;

/// Characters per estimated token.
pub const CHARS_PER_TOKEN: usize = 4;

/// How far a chunk boundary may move backwards to reach whitespace.
/// Longer than any realistic word; a boundary inside a run of non-whitespace
/// wider than this falls back to the raw character offset.
pub const BACKTRACK_CHARS: usize = 64;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("chunk overlap ({overlap}) must be smaller than chunk size ({chunk_size})")]
    OverlapTooLarge { overlap: usize, chunk_size: usize },
    #[error("document {doc_id} has empty text")]
    EmptyDocument { doc_id: String },
    #[error("duplicate doc_id {0}")]
    DuplicateDocId(String),
    #[error("failed to read corpus: {0}")]
    Io(#[from] std::io::Error),
}

/// A source document with already-extracted plain text.
#[derive(Debug, Clone)]
pub struct SourceDocument {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    /// Filename or URL used for citations.
    pub origin: String,
}

/// A contiguous piece of one document, sized in estimated tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    /// 0-based position within the document.
    pub seq: usize,
    pub text: String,
    pub token_estimate: usize,
    /// (start, end) offsets into the source text, counted in Unicode scalar
    /// values. Spans of consecutive chunks overlap; their union covers the
    /// whole document.
    pub char_span: (usize, usize),
}

/// Estimate the token count of a text as ceil(chars / 4).
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(CHARS_PER_TOKEN)
}

/// True when cutting between `chars[i-1]` and `chars[i]` does not land inside
/// a word.
fn is_word_boundary(chars: &[char], i: usize) -> bool {
    chars[i - 1].is_whitespace() || chars[i].is_whitespace()
}

/// Largest word boundary in `(max(lo, target - BACKTRACK_CHARS), target]`,
/// falling back to `target` itself when the whole backtrack window sits
/// inside one word.
fn snap_to_boundary(chars: &[char], target: usize, lo: usize) -> usize {
    let floor = lo.max(target.saturating_sub(BACKTRACK_CHARS));
    let mut i = target;
    while i > floor {
        if is_word_boundary(chars, i) {
            return i;
        }
        i -= 1;
    }
    target
}

/// Split one document into overlapping chunks.
///
/// The window is `chunk_size_tokens * 4` characters and advances by
/// `(chunk_size - overlap) * 4` characters per step; both the window end and
/// the next window start are snapped to word boundaries. The final chunk
/// absorbs whatever remains once the tail fits in a single window.
pub fn chunk_document(
    doc: &SourceDocument,
    chunk_size_tokens: usize,
    overlap_tokens: usize,
) -> Result<Vec<Chunk>, IngestError> {
    if overlap_tokens >= chunk_size_tokens {
        return Err(IngestError::OverlapTooLarge {
            overlap: overlap_tokens,
            chunk_size: chunk_size_tokens,
        });
    }
    if doc.text.is_empty() {
        return Err(IngestError::EmptyDocument {
            doc_id: doc.doc_id.clone(),
        });
    }

    let chars: Vec<char> = doc.text.chars().collect();
    let len = chars.len();
    let window = chunk_size_tokens * CHARS_PER_TOKEN;
    let overlap_chars = overlap_tokens * CHARS_PER_TOKEN;

    let mut chunks = Vec::new();
    let mut start = 0usize;
    loop {
        if len - start <= window {
            chunks.push(make_chunk(doc, chunks.len(), &chars, start, len));
            break;
        }
        let end = snap_to_boundary(&chars, start + window, start);
        chunks.push(make_chunk(doc, chunks.len(), &chars, start, end));
        let next_raw = end.saturating_sub(overlap_chars).max(start + 1);
        start = snap_to_boundary(&chars, next_raw, start);
    }
    Ok(chunks)
}

fn make_chunk(doc: &SourceDocument, seq: usize, chars: &[char], start: usize, end: usize) -> Chunk {
    let text: String = chars[start..end].iter().collect();
    Chunk {
        chunk_id: format!("{}#{}", doc.doc_id, seq),
        doc_id: doc.doc_id.clone(),
        seq,
        token_estimate: estimate_tokens(&text),
        text,
        char_span: (start, end),
    }
}

/// Chunk a whole corpus, preserving document order.
pub fn ingest_corpus(
    docs: &[SourceDocument],
    config: &RuntimeConfig,
) -> Result<Vec<Chunk>, IngestError> {
    let mut seen = HashSet::new();
    for doc in docs {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(IngestError::DuplicateDocId(doc.doc_id.clone()));
        }
    }
    let mut chunks = Vec::new();
    for doc in docs {
        chunks.extend(chunk_document(
            doc,
            config.chunk_size_tokens,
            config.chunk_overlap_tokens,
        )?);
    }
    Ok(chunks)
}

/// Read every `.txt` / `.md` file under `dir` as one [`SourceDocument`].
/// `doc_id` and `origin` are the path relative to `dir`; files that are empty
/// or not valid UTF-8 are skipped with a warning.
pub fn read_corpus_dir(dir: &Path) -> Result<Vec<SourceDocument>, IngestError> {
    let mut docs = Vec::new();
    let mut entries: Vec<_> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();
    entries.sort();
    for path in entries {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "txt" | "md") {
            continue;
        }
        let rel = path
            .strip_prefix(dir)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(err) => {
                log::warn!("skipping {rel}: {err}");
                continue;
            }
        };
        if text.is_empty() {
            log::warn!("skipping {rel}: empty file");
            continue;
        }
        let title = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| rel.clone());
        docs.push(SourceDocument {
            doc_id: rel.clone(),
            title,
            text,
            origin: rel,
        });
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    // ---- independent windowing oracle -------------------------------------
    //
    // Re-implements the documented boundary rule through different machinery:
    // all word-boundary cut positions are precomputed from the whitespace
    // structure and looked up by binary search, instead of the backward
    // character scan the implementation uses.

    fn oracle_spans(text: &str, chunk_size: usize, overlap: usize) -> Vec<(usize, usize)> {
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len();
        let window = chunk_size * CHARS_PER_TOKEN;
        let overlap_chars = overlap * CHARS_PER_TOKEN;
        let cuts: Vec<usize> = (1..n)
            .filter(|&i| chars[i - 1].is_whitespace() || chars[i].is_whitespace())
            .collect();
        let snap = |target: usize, lo: usize| -> usize {
            let floor = lo.max(target.saturating_sub(BACKTRACK_CHARS));
            let idx = cuts.partition_point(|&c| c <= target);
            if idx > 0 && cuts[idx - 1] > floor {
                cuts[idx - 1]
            } else {
                target
            }
        };
        let mut spans = Vec::new();
        let mut start = 0usize;
        loop {
            if n - start <= window {
                spans.push((start, n));
                return spans;
            }
            let end = snap(start + window, start);
            spans.push((start, end));
            start = snap(end.saturating_sub(overlap_chars).max(start + 1), start);
        }
    }

    fn synthetic_text(rng: &mut ChaCha8Rng, approx_tokens: usize) -> String {
        let mut out = String::new();
        while estimate_tokens(&out) < approx_tokens {
            let word_len = rng.gen_range(1..=12);
            for _ in 0..word_len {
                out.push(rng.gen_range(b'a'..=b'z') as char);
            }
            out.push(if rng.gen_bool(0.1) { '\n' } else { ' ' });
        }
        out
    }

    fn doc(text: &str) -> SourceDocument {
        SourceDocument {
            doc_id: "d0".into(),
            title: "d0".into(),
            text: text.into(),
            origin: "d0.txt".into(),
        }
    }

    // ---- estimate_tokens ---------------------------------------------------

    #[test]
    fn estimate_of_empty_is_zero() {
        assert_eq!(estimate_tokens(""), 0);
    }

    #[test]
    fn estimate_of_4096_chars_is_1024() {
        assert_eq!(estimate_tokens(&"x".repeat(4096)), 1024);
    }

    #[test]
    fn estimate_rounds_up() {
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("a"), 1);
    }

    // ---- chunk_document ----------------------------------------------------

    #[test]
    fn short_text_yields_single_chunk() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let text = synthetic_text(&mut rng, 100);
        let chunks = chunk_document(&doc(&text), 512, 64).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].char_span, (0, text.chars().count()));
        assert_eq!(chunks[0].text, text);
        assert_eq!(chunks[0].seq, 0);
    }

    #[test]
    fn exact_window_fit_yields_single_chunk() {
        // 512 * 4 characters of single-character words ("a b c ...")
        let text = "a ".repeat(1024);
        assert_eq!(text.chars().count(), 512 * CHARS_PER_TOKEN);
        let chunks = chunk_document(&doc(&text), 512, 64).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_estimate, 512);
    }

    #[test]
    fn spans_match_windowing_oracle_on_2000_token_text() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let text = synthetic_text(&mut rng, 2000);
        let chunks = chunk_document(&doc(&text), 512, 64).unwrap();
        let expected = oracle_spans(&text, 512, 64);
        assert_eq!(
            chunks.iter().map(|c| c.char_span).collect::<Vec<_>>(),
            expected
        );
        assert!(chunks.len() > 1);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            chunk_document(&doc("hello"), 64, 64),
            Err(IngestError::OverlapTooLarge { .. })
        ));
        assert!(matches!(
            chunk_document(&doc(""), 64, 8),
            Err(IngestError::EmptyDocument { .. })
        ));
    }

    #[test]
    fn giant_word_falls_back_to_raw_offsets() {
        let text = "y".repeat(3000); // no whitespace anywhere
        let chunks = chunk_document(&doc(&text), 128, 16).unwrap();
        for c in &chunks {
            assert!(c.token_estimate <= 128);
        }
        // exact character windows with exact overlap
        assert_eq!(chunks[0].char_span, (0, 512));
        assert_eq!(chunks[1].char_span.0, 512 - 64);
        let last = chunks.last().unwrap();
        assert_eq!(last.char_span.1, 3000);
    }

    #[test]
    fn chunking_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let text = synthetic_text(&mut rng, 900);
        let a = chunk_document(&doc(&text), 256, 32).unwrap();
        let b = chunk_document(&doc(&text), 256, 32).unwrap();
        assert_eq!(a, b);
    }

    fn assert_chunk_invariants(text: &str, chunks: &[Chunk], chunk_size: usize, overlap: usize) {
        let total_chars = text.chars().count();
        assert_eq!(chunks[0].char_span.0, 0);
        assert_eq!(chunks.last().unwrap().char_span.1, total_chars);
        let mut reconstructed = String::new();
        for (i, c) in chunks.iter().enumerate() {
            assert_eq!(c.seq, i);
            assert!(
                c.token_estimate <= chunk_size,
                "budget violated: {} > {chunk_size}",
                c.token_estimate
            );
            if i > 0 {
                let prev = &chunks[i - 1];
                assert!(c.char_span.0 > prev.char_span.0, "spans must increase");
                assert!(c.char_span.0 <= prev.char_span.1, "gap in coverage");
                if overlap > 0 {
                    assert!(c.char_span.0 < prev.char_span.1, "expected overlap");
                }
                let skip = prev.char_span.1 - c.char_span.0;
                reconstructed.extend(c.text.chars().skip(skip));
            } else {
                reconstructed.push_str(&c.text);
            }
        }
        assert_eq!(reconstructed, text, "reconstruction failed");
    }

    #[test]
    fn invariants_hold_on_randomized_documents() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..120 {
            let chunk_size = rng.gen_range(32..=512);
            let overlap = rng.gen_range(0..=chunk_size / 4);
            let tokens = rng.gen_range(1..=2500);
            let text = synthetic_text(&mut rng, tokens);
            let chunks = chunk_document(&doc(&text), chunk_size, overlap).unwrap();
            assert_chunk_invariants(&text, &chunks, chunk_size, overlap);
            let expected = oracle_spans(&text, chunk_size, overlap);
            assert_eq!(
                chunks.iter().map(|c| c.char_span).collect::<Vec<_>>(),
                expected,
                "trial {trial}: oracle mismatch (size={chunk_size}, overlap={overlap})"
            );
        }
    }

    // ---- ingest_corpus -----------------------------------------------------

    fn test_config() -> RuntimeConfig {
        RuntimeConfig::default()
    }

    #[test]
    fn empty_corpus_yields_no_chunks() {
        assert!(ingest_corpus(&[], &test_config()).unwrap().is_empty());
    }

    #[test]
    fn corpus_preserves_document_order() {
        let a = SourceDocument {
            doc_id: "a".into(),
            title: "a".into(),
            text: "alpha text".into(),
            origin: "a.txt".into(),
        };
        let b = SourceDocument {
            doc_id: "b".into(),
            title: "b".into(),
            text: "beta text".into(),
            origin: "b.txt".into(),
        };
        let chunks = ingest_corpus(&[a, b], &test_config()).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].doc_id, "a");
        assert_eq!(chunks[1].doc_id, "b");
        assert_eq!(chunks[0].chunk_id, "a#0");
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        let d = doc("hello world");
        assert!(matches!(
            ingest_corpus(&[d.clone(), d], &test_config()),
            Err(IngestError::DuplicateDocId(_))
        ));
    }

    #[test]
    fn corpus_chunk_count_matches_per_document_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut docs = Vec::new();
        let mut expected = 0usize;
        for i in 0..3 {
            let text = synthetic_text(&mut rng, 1500 + i * 400);
            expected += oracle_spans(&text, 512, 64).len();
            docs.push(SourceDocument {
                doc_id: format!("doc{i}"),
                title: format!("doc{i}"),
                text,
                origin: format!("doc{i}.txt"),
            });
        }
        let chunks = ingest_corpus(&docs, &test_config()).unwrap();
        assert_eq!(chunks.len(), expected);
        let ids: HashSet<_> = chunks.iter().map(|c| c.chunk_id.clone()).collect();
        assert_eq!(ids.len(), chunks.len(), "chunk ids must be unique");
    }
}
