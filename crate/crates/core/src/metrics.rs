//! Answer-quality metrics: Rouge-N, Rouge-L, sentence BLEU, embedding
//! similarity, expert-rating aggregation and similarity histograms.
//!
//! All text metrics use the retrieval tokenizer (lowercased alphanumeric
//! runs).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedder;
use crate::tokenize::tokenize;
use crate::transport::ProviderError;
use crate::vector_store::cosine;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ratings for run {0:?}")]
    NoRatings(String),
    #[error("bin width must be positive, got {0}")]
    BinWidth(f64),
    #[error("similarity score {0} outside [-1, 1]")]
    ScoreOutOfRange(f64),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("ratings line {line}: {message}")]
    BadRating { line: u64, message: String },
    #[error("semantic similarity needs non-empty texts")]
    EmptyText,
    #[error("embedding produced a zero vector")]
    ZeroEmbedding,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(overlap, candidate_total);
        let recall = ratio(overlap, reference_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the candidate n-gram total.
fn clipped_matches(cand: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (overlap, cand.len().saturating_sub(n - 1))
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Prf {
    assert!(n >= 1, "rouge n must be at least 1");
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let (overlap, cand_total) = clipped_matches(&c, &r, n);
    Prf::from_counts(overlap, cand_total, r.len().saturating_sub(n - 1))
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    Prf::from_counts(lcs_len(&c, &r), c.len(), r.len())
}

/// Sentence-level BLEU with zero-match smoothing.
///
/// For each order n the modified precision is `matches / total`; an order
/// with no candidate n-grams is skipped, and an order with zero matches uses
/// `1 / (2·total)` instead. The geometric mean of the used orders is scaled
/// by the brevity penalty.
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> f64 {
    assert!(max_n >= 1, "bleu max_n must be at least 1");
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut used = 0usize;
    for n in 1..=max_n {
        let (matches, total) = clipped_matches(&c, &r, n);
        if total == 0 {
            continue;
        }
        let p = if matches == 0 {
            1.0 / (2.0 * total as f64)
        } else {
            matches as f64 / total as f64
        };
        log_sum += p.ln();
        used += 1;
    }
    let geo = (log_sum / used as f64).exp();
    let bp = if c.len() >= r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    bp * geo
}

/// Cosine similarity between the provider's embeddings of both texts.
pub fn semantic_similarity(candidate: &str, reference: &str, provider: &dyn Embedder) -> Result<f64, MetricsError> {
    if candidate.trim().is_empty() || reference.trim().is_empty() {
        return Err(MetricsError::EmptyText);
    }
    let r = provider.embed_batch(&[candidate.to_string(), reference.to_string()])?;
    cosine(&r.vectors[0], &r.vectors[1]).ok_or(MetricsError::ZeroEmbedding)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub run_id: String,
    pub question_id: String,
    pub rater_id: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingDistribution {
    /// `counts[i]` is the number of ratings equal to `i + 1`.
    pub counts: [u64; 5],
}

impl RatingDistribution {
    pub fn from_counts(counts: [u64; 5]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `Σ i·c_i / n`; `None` when there are no ratings.
    pub fn mean(&self) -> Option<f64> {
        let n = self.total();
        if n == 0 {
            return None;
        }
        let weighted: u64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as u64 + 1) * c)
            .sum();
        Some(weighted as f64 / n as f64)
    }
}

pub fn aggregate_ratings(records: &[RatingRecord], run_id: &str) -> Result<RatingDistribution, MetricsError> {
    let mut counts = [0u64; 5];
    for r in records.iter().filter(|r| r.run_id == run_id) {
        counts[(r.score - 1) as usize] += 1;
    }
    let dist = RatingDistribution { counts };
    if dist.total() == 0 {
        return Err(MetricsError::NoRatings(run_id.to_string()));
    }
    Ok(dist)
}

/// Reads `run_id,question_id,rater_id,score` CSV with a header row.
pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>, MetricsError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => MetricsError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => MetricsError::BadRating {
            line: 0,
            message: format!("{other:?}"),
        },
    })?;
    let mut out = Vec::new();
    for row in reader.deserialize::<RatingRecord>() {
        let record = row.map_err(|e| MetricsError::BadRating {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !(1..=5).contains(&record.score) {
            return Err(MetricsError::BadRating {
                line: out.len() as u64 + 2,
                message: format!("score {} outside 1..=5", record.score),
            });
        }
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

fn tidy(x: f64) -> f64 {
    (x * 1e10).round() / 1e10
}

/// Fixed-width bins over `[0, 1]` (right-open, the last one closed at 1),
/// preceded by one `[-1, 0)` bin for negative similarities.
pub fn similarity_histogram(scores: &[f64], bin_width: f64) -> Result<Vec<HistogramBin>, MetricsError> {
    if !bin_width.is_finite() || bin_width <= 0.0 {
        return Err(MetricsError::BinWidth(bin_width));
    }
    let ratio = 1.0 / bin_width;
    let n_bins = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    }
    .max(1);

    let mut bins = vec![HistogramBin {
        lower: -1.0,
        upper: 0.0,
        count: 0,
    }];
    for i in 0..n_bins {
        bins.push(HistogramBin {
            lower: tidy(i as f64 * bin_width),
            upper: tidy(((i + 1) as f64 * bin_width).min(1.0)),
            count: 0,
        });
    }
    for &s in scores {
        if !(-1.0..=1.0).contains(&s) {
            return Err(MetricsError::ScoreOutOfRange(s));
        }
        let slot = if s < 0.0 {
            0
        } else {
            // The epsilon keeps values like 0.3 out of the [0.2, 0.3) bin.
            let i = ((s / bin_width) + 1e-9).floor() as usize;
            1 + i.min(n_bins - 1)
        };
        bins[slot].count += 1;
    }
    Ok(bins)
}

pub fn histogram_tsv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("lower\tupper\tcount\n");
    for b in bins {
        let _ = writeln!(out, "{}\t{}\t{}", b.lower, b.upper, b.count);
    }
    out
}
