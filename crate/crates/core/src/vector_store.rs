//! Exact cosine-similarity nearest neighbour search over chunk embeddings.
//!
//! Persistence is JSONL: a header line
//! `{"format":"lexqa-vectors","version":1,"dimension":d,"provider_name":..,"count":n}`
//! followed by `n` lines of `{"chunk_id":..,"vector":[..]}`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOP_K: usize = 4;

const FORMAT: &str = "lexqa-vectors";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VectorStoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate chunk id {0:?}")]
    DuplicateChunk(String),
    #[error("zero or non-finite vector")]
    ZeroVector,
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt vector store: {0}")]
    Corrupt(String),
    #[error("unsupported vector store version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub chunk_id: String,
    pub vector: Vec<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dimension: usize,
    provider_name: String,
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub chunk_id: String,
    pub similarity: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dimension: usize,
    provider_name: String,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    chunk_id: String,
    vector: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

impl VectorStore {
    pub fn new(dimension: usize, provider_name: impl Into<String>) -> Self {
        Self {
            dimension,
            provider_name: provider_name.into(),
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provider_name(&self) -> &str {
        &self.provider_name
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, chunk_id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(chunk_id).map(|&i| &self.records[i])
    }

    fn check_vector(&self, vector: &[f64]) -> Result<f64, VectorStoreError> {
        if vector.len() != self.dimension {
            return Err(VectorStoreError::DimensionMismatch {
                expected: self.dimension,
                got: vector.len(),
            });
        }
        let n = norm(vector);
        if n == 0.0 || !n.is_finite() {
            return Err(VectorStoreError::ZeroVector);
        }
        Ok(n)
    }

    pub fn add(&mut self, chunk_id: impl Into<String>, vector: Vec<f64>) -> Result<(), VectorStoreError> {
        let chunk_id = chunk_id.into();
        let norm = self.check_vector(&vector)?;
        if self.index.contains_key(&chunk_id) {
            return Err(VectorStoreError::DuplicateChunk(chunk_id));
        }
        self.index.insert(chunk_id.clone(), self.records.len());
        self.records.push(EmbeddingRecord {
            chunk_id,
            vector,
            norm,
        });
        Ok(())
    }

    /// The `min(k, len)` most similar records, by descending cosine
    /// similarity and then ascending chunk id.
    pub fn knn_query(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>, VectorStoreError> {
        let qn = self.check_vector(query)?;
        let mut scored: Vec<(f64, &str)> = self
            .records
            .iter()
            .map(|r| {
                let sim = (dot(query, &r.vector) / (qn * r.norm)).clamp(-1.0, 1.0);
                (sim, r.chunk_id.as_str())
            })
            .collect();
        let cmp = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(similarity, id)| Neighbor {
                chunk_id: id.to_string(),
                similarity,
            })
            .collect())
    }

    pub fn persist(&self, path: &Path) -> Result<(), VectorStoreError> {
        let io_err = |source| VectorStoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        let header = Header {
            format: FORMAT.to_string(),
            version: VERSION,
            dimension: self.dimension,
            provider_name: self.provider_name.clone(),
            count: self.records.len(),
        };
        write_line(&mut w, &header).map_err(io_err)?;
        for r in &self.records {
            let line = RecordLine {
                chunk_id: r.chunk_id.clone(),
                vector: r.vector.clone(),
            };
            write_line(&mut w, &line).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, VectorStoreError> {
        let io_err = |source| VectorStoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut lines = BufReader::new(File::open(path).map_err(io_err)?).lines();
        let first = lines
            .next()
            .ok_or_else(|| VectorStoreError::Corrupt("missing header".into()))?
            .map_err(io_err)?;
        let header: Header = serde_json::from_str(&first)
            .map_err(|e| VectorStoreError::Corrupt(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(VectorStoreError::Corrupt(format!(
                "unexpected format {:?}",
                header.format
            )));
        }
        if header.version != VERSION {
            return Err(VectorStoreError::Version(header.version));
        }
        let mut store = Self::new(header.dimension, header.provider_name);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine = serde_json::from_str(&line)
                .map_err(|e| VectorStoreError::Corrupt(format!("line {}: {e}", i + 2)))?;
            store.add(rec.chunk_id, rec.vector)?;
        }
        if store.len() != header.count {
            return Err(VectorStoreError::Corrupt(format!(
                "header declares {} records, found {}",
                header.count,
                store.len()
            )));
        }
        Ok(store)
    }
}

fn write_line<T: Serialize>(w: &mut impl Write, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}
