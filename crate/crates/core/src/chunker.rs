//! Separator-based chunking with whole-segment overlap.
//!
//! Text is cut after every occurrence of the separator. Segments are packed
//! greedily into chunks of at most `chunk_size` characters, and every chunk
//! after the first starts with the longest run of trailing segments from the
//! previous chunk that fits in `overlap` characters. A segment that is larger
//! than `chunk_size` on its own is emitted as a chunk by itself, untouched.
//!
//! All lengths are in characters, not bytes.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CleanDocument;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkerConfig {
    pub separator: String,
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        Self {
            separator: ".".to_string(),
            chunk_size: 1000,
            overlap: 250,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkerConfigError {
    #[error("separator must not be empty")]
    EmptySeparator,
    #[error("chunk_size must be positive")]
    ZeroChunkSize,
    #[error("overlap ({overlap}) must be smaller than chunk_size ({chunk_size})")]
    OverlapTooLarge { overlap: usize, chunk_size: usize },
}

impl ChunkerConfig {
    pub fn new(
        separator: impl Into<String>,
        chunk_size: usize,
        overlap: usize,
    ) -> Result<Self, ChunkerConfigError> {
        let cfg = Self {
            separator: separator.into(),
            chunk_size,
            overlap,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ChunkerConfigError> {
        if self.separator.is_empty() {
            return Err(ChunkerConfigError::EmptySeparator);
        }
        if self.chunk_size == 0 {
            return Err(ChunkerConfigError::ZeroChunkSize);
        }
        if self.overlap >= self.chunk_size {
            return Err(ChunkerConfigError::OverlapTooLarge {
                overlap: self.overlap,
                chunk_size: self.chunk_size,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
}

impl Chunk {
    pub fn make_id(doc_id: &str, seq: usize) -> String {
        format!("{doc_id}#{seq}")
    }
}

/// Where a chunk sits in its source text.
///
/// `bytes` is the chunk's byte range; the first `overlap_bytes` of it repeat
/// the tail of the previous chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSpan {
    pub bytes: Range<usize>,
    pub overlap_bytes: usize,
}

#[derive(Debug, Clone)]
struct Segment {
    bytes: Range<usize>,
    chars: usize,
}

fn segments(text: &str, separator: &str) -> Vec<Segment> {
    // Text made only of separators has nothing worth retrieving.
    if text.split(separator).all(str::is_empty) {
        return Vec::new();
    }
    let mut offset = 0;
    text.split_inclusive(separator)
        .map(|piece| {
            let bytes = offset..offset + piece.len();
            offset = bytes.end;
            Segment {
                bytes,
                chars: piece.chars().count(),
            }
        })
        .collect()
}

/// Plans chunk boundaries for `text` without copying it.
pub fn plan_chunks(text: &str, cfg: &ChunkerConfig) -> Vec<ChunkSpan> {
    let segs = segments(text, &cfg.separator);
    let mut spans = Vec::new();

    // Indices into `segs`: current chunk covers segs[start..end], of which
    // segs[start..fresh] are the overlap carried from the previous chunk.
    let mut start = 0;
    let mut fresh = 0;
    let mut end = 0;
    let mut len = 0;
    let mut last_emitted: Option<Range<usize>> = None;

    let emit = |spans: &mut Vec<ChunkSpan>, start: usize, fresh: usize, end: usize| {
        let bytes = segs[start].bytes.start..segs[end - 1].bytes.end;
        let overlap_bytes = segs[fresh].bytes.start - bytes.start;
        spans.push(ChunkSpan {
            bytes,
            overlap_bytes,
        });
    };

    // Longest run of whole trailing segments of `chunk` fitting in the budget.
    let overlap_start = |chunk: &Range<usize>| -> usize {
        let mut total = 0;
        let mut i = chunk.end;
        while i > chunk.start && total + segs[i - 1].chars <= cfg.overlap {
            total += segs[i - 1].chars;
            i -= 1;
        }
        i
    };

    for (i, seg) in segs.iter().enumerate() {
        let has_fresh = end > fresh;
        if seg.chars > cfg.chunk_size {
            if has_fresh {
                emit(&mut spans, start, fresh, end);
            }
            spans.push(ChunkSpan {
                bytes: seg.bytes.clone(),
                overlap_bytes: 0,
            });
            last_emitted = Some(i..i + 1);
            start = i + 1;
            fresh = i + 1;
            end = i + 1;
            len = 0;
            continue;
        }
        if has_fresh && len + seg.chars <= cfg.chunk_size {
            end = i + 1;
            len += seg.chars;
            continue;
        }
        if has_fresh {
            emit(&mut spans, start, fresh, end);
            last_emitted = Some(start..end);
        }
        start = last_emitted.as_ref().map_or(i, overlap_start);
        fresh = i;
        end = i + 1;
        len = segs[start..end].iter().map(|s| s.chars).sum();
    }
    if end > fresh {
        emit(&mut spans, start, fresh, end);
    }
    spans
}

/// Splits a document into ordered chunks with ids `<doc_id>#<seq>`.
pub fn split_document(doc: &CleanDocument, cfg: &ChunkerConfig) -> Vec<Chunk> {
    plan_chunks(&doc.text, cfg)
        .into_iter()
        .enumerate()
        .map(|(seq, span)| Chunk {
            chunk_id: Chunk::make_id(&doc.id, seq),
            doc_id: doc.id.clone(),
            seq,
            text: doc.text[span.bytes].to_string(),
        })
        .collect()
}

pub fn split_corpus(docs: &[CleanDocument], cfg: &ChunkerConfig) -> Vec<Chunk> {
    docs.iter().flat_map(|d| split_document(d, cfg)).collect()
}
