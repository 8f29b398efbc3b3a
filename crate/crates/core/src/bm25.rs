//! Okapi BM25 inverted index with exact top-k retrieval.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ distinct(q)} idf(t) · f(t,d)·(k1+1) / (f(t,d) + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln(1 + (N − n_t + 0.5) / (n_t + 0.5))
//! ```
//!
//! Chunks are stored in ascending `chunk_id` order so internal document
//! numbers double as the tie-break key.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::Chunk;
use crate::tokenize::TokenizerConfig;

pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;
pub const DEFAULT_TOP_K: usize = 3;

const FORMAT: &str = "lexqa-bm25";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum Bm25Error {
    #[error("duplicate chunk id {0:?}")]
    DuplicateChunk(String),
    #[error("unknown chunk id {0:?}")]
    UnknownChunk(String),
    #[error("invalid parameters: k1 = {k1}, b = {b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error("unsupported index version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position in [`Bm25Index::chunk_ids`].
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    tokenizer: TokenizerConfig,
    k1: f64,
    b: f64,
    chunk_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    by_id: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    k1: f64,
    b: f64,
    tokenizer: TokenizerConfig,
    chunk_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build(
        chunks: &[Chunk],
        tokenizer: TokenizerConfig,
        k1: f64,
        b: f64,
    ) -> Result<Self, Bm25Error> {
        if !(k1 > 0.0 && k1.is_finite()) || !(0.0..=1.0).contains(&b) {
            return Err(Bm25Error::InvalidParams { k1, b });
        }
        let mut order: Vec<&Chunk> = chunks.iter().collect();
        order.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
        for pair in order.windows(2) {
            if pair[0].chunk_id == pair[1].chunk_id {
                return Err(Bm25Error::DuplicateChunk(pair[0].chunk_id.clone()));
            }
        }

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(order.len());
        for (doc, chunk) in order.iter().enumerate() {
            let tokens = tokenizer.tokenize(&chunk.text);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: doc as u32,
                    tf: count,
                });
            }
        }
        let chunk_ids = order.into_iter().map(|c| c.chunk_id.clone()).collect();
        Ok(Self::assemble(tokenizer, k1, b, chunk_ids, doc_lengths, postings))
    }

    fn assemble(
        tokenizer: TokenizerConfig,
        k1: f64,
        b: f64,
        chunk_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avgdl = if chunk_ids.is_empty() {
            0.0
        } else {
            total as f64 / chunk_ids.len() as f64
        };
        let by_id = chunk_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Self {
            tokenizer,
            k1,
            b,
            chunk_ids,
            doc_lengths,
            avgdl,
            postings,
            by_id,
        }
    }

    pub fn len(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        self.tokenizer
    }

    /// Chunk ids in ascending order.
    pub fn chunk_ids(&self) -> &[String] {
        &self.chunk_ids
    }

    pub fn doc_length(&self, chunk_id: &str) -> Option<u32> {
        self.by_id.get(chunk_id).map(|&d| self.doc_lengths[d as usize])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn term_frequency(&self, term: &str, chunk_id: &str) -> u32 {
        let Some(&doc) = self.by_id.get(chunk_id) else {
            return 0;
        };
        let list = self.postings(term);
        list.binary_search_by_key(&doc, |p| p.doc)
            .map_or(0, |i| list[i].tf)
    }

    /// Inverse document frequency; always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let nt = self.postings(term).len() as f64;
        (1.0 + (n - nt + 0.5) / (nt + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc: u32) -> f64 {
        let tf = tf as f64;
        let dl = self.doc_lengths[doc as usize] as f64;
        let norm = if self.avgdl > 0.0 { dl / self.avgdl } else { 0.0 };
        idf * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm))
    }

    fn distinct_terms(query_tokens: &[String]) -> BTreeSet<&str> {
        query_tokens.iter().map(String::as_str).collect()
    }

    /// Scores one chunk against already-tokenized query terms.
    pub fn score(&self, query_tokens: &[String], chunk_id: &str) -> Result<f64, Bm25Error> {
        let &doc = self
            .by_id
            .get(chunk_id)
            .ok_or_else(|| Bm25Error::UnknownChunk(chunk_id.to_string()))?;
        let mut total = 0.0;
        for term in Self::distinct_terms(query_tokens) {
            let list = self.postings(term);
            if let Ok(i) = list.binary_search_by_key(&doc, |p| p.doc) {
                total += self.term_weight(self.idf(term), list[i].tf, doc);
            }
        }
        Ok(total)
    }

    /// Returns `min(k, N)` chunks by descending score, ties by ascending
    /// chunk id. Zero-score chunks are eligible.
    pub fn retrieve_top_k(&self, query: &str, k: usize) -> Vec<ScoredChunk> {
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let tokens = self.tokenizer.tokenize(query);
        let mut scores = vec![0.0f64; self.len()];
        for term in Self::distinct_terms(&tokens) {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in list {
                scores[p.doc as usize] += self.term_weight(idf, p.tf, p.doc);
            }
        }

        let mut ranked: Vec<u32> = (0..self.len() as u32).collect();
        let cmp = |a: &u32, b: &u32| {
            scores[*b as usize]
                .total_cmp(&scores[*a as usize])
                .then(a.cmp(b))
        };
        let k = k.min(ranked.len());
        if k < ranked.len() {
            ranked.select_nth_unstable_by(k - 1, cmp);
            ranked.truncate(k);
        }
        ranked.sort_unstable_by(cmp);
        ranked
            .into_iter()
            .map(|d| ScoredChunk {
                chunk_id: self.chunk_ids[d as usize].clone(),
                score: scores[d as usize],
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), Bm25Error> {
        let file = IndexFile {
            format: FORMAT.to_string(),
            version: VERSION,
            k1: self.k1,
            b: self.b,
            tokenizer: self.tokenizer,
            chunk_ids: self.chunk_ids.clone(),
            doc_lengths: self.doc_lengths.clone(),
            postings: self
                .postings
                .iter()
                .map(|(t, l)| (t.clone(), l.iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        };
        let body = serde_json::to_vec(&file).expect("index serialize");
        std::fs::write(path, body).map_err(|source| Bm25Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, Bm25Error> {
        let body = std::fs::read(path).map_err(|source| Bm25Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: IndexFile =
            serde_json::from_slice(&body).map_err(|e| Bm25Error::Corrupt(e.to_string()))?;
        if file.format != FORMAT {
            return Err(Bm25Error::Corrupt(format!("unexpected format {:?}", file.format)));
        }
        if file.version != VERSION {
            return Err(Bm25Error::Version(file.version));
        }
        if file.k1.is_nan() || file.k1 <= 0.0 || !(0.0..=1.0).contains(&file.b) {
            return Err(Bm25Error::InvalidParams { k1: file.k1, b: file.b });
        }
        let n = file.chunk_ids.len();
        if file.doc_lengths.len() != n {
            return Err(Bm25Error::Corrupt("doc_lengths length mismatch".into()));
        }
        if file.chunk_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Bm25Error::Corrupt("chunk ids not strictly sorted".into()));
        }
        let mut postings = BTreeMap::new();
        for (term, list) in file.postings {
            let ok = list.iter().all(|&(d, tf)| (d as usize) < n && tf >= 1)
                && list.windows(2).all(|w| w[0].0 < w[1].0);
            if !ok {
                return Err(Bm25Error::Corrupt(format!("bad postings for {term:?}")));
            }
            postings.insert(
                term,
                list.into_iter().map(|(doc, tf)| Posting { doc, tf }).collect(),
            );
        }
        Ok(Self::assemble(
            file.tokenizer,
            file.k1,
            file.b,
            file.chunk_ids,
            file.doc_lengths,
            postings,
        ))
    }
}
