//! Document loading and text normalization.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl;

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentKind {
    Judgment,
    Act,
    Article,
}

impl DocumentKind {
    pub const ALL: [DocumentKind; 3] = [Self::Judgment, Self::Act, Self::Article];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Judgment => "judgment",
            Self::Act => "act",
            Self::Article => "article",
        }
    }
}

impl fmt::Display for DocumentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of the corpus JSONL input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub kind: DocumentKind,
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub source_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub id: String,
    pub kind: DocumentKind,
    pub title: String,
    pub text: String,
    pub word_count: usize,
}

impl CleanDocument {
    pub fn from_raw(raw: RawDocument) -> Self {
        let text = clean_text(&raw.text);
        let word_count = text.split(' ').filter(|t| !t.is_empty()).count();
        Self {
            id: raw.id,
            kind: raw.kind,
            title: raw.title,
            text,
            word_count,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed document: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: empty document id")]
    EmptyId { line: usize },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
}

/// Collapses every run of whitespace (line breaks included) into a single
/// space and strips both ends.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for token in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Loads a corpus JSONL file, cleaning every document. Ids must be unique.
pub fn load_corpus(path: &Path) -> Result<Vec<CleanDocument>, CorpusError> {
    let rows: Vec<(usize, RawDocument)> = jsonl::read(path).map_err(|e| match e {
        jsonl::ReadError::Io(source) => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        jsonl::ReadError::Line(l) => CorpusError::Malformed {
            line: l.line,
            message: l.message,
        },
    })?;

    let mut seen: HashMap<String, usize> = HashMap::with_capacity(rows.len());
    let mut docs = Vec::with_capacity(rows.len());
    for (line, raw) in rows {
        if raw.id.is_empty() {
            return Err(CorpusError::EmptyId { line });
        }
        if seen.insert(raw.id.clone(), line).is_some() {
            return Err(CorpusError::DuplicateId { line, id: raw.id });
        }
        docs.push(CleanDocument::from_raw(raw));
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub count: usize,
    pub avg_word_count: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub judgment: KindStats,
    pub act: KindStats,
    pub article: KindStats,
}

impl CorpusStats {
    pub fn get(&self, kind: DocumentKind) -> &KindStats {
        match kind {
            DocumentKind::Judgment => &self.judgment,
            DocumentKind::Act => &self.act,
            DocumentKind::Article => &self.article,
        }
    }

    fn get_mut(&mut self, kind: DocumentKind) -> &mut KindStats {
        match kind {
            DocumentKind::Judgment => &mut self.judgment,
            DocumentKind::Act => &mut self.act,
            DocumentKind::Article => &mut self.article,
        }
    }

    pub fn total(&self) -> usize {
        self.judgment.count + self.act.count + self.article.count
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind\tcount\tavg_words")?;
        for kind in DocumentKind::ALL {
            let s = self.get(kind);
            writeln!(f, "{kind}\t{}\t{}", s.count, s.avg_word_count.round() as u64)?;
        }
        Ok(())
    }
}

pub fn corpus_stats(corpus: &[CleanDocument]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    let mut totals: HashMap<DocumentKind, usize> = HashMap::new();
    for doc in corpus {
        stats.get_mut(doc.kind).count += 1;
        *totals.entry(doc.kind).or_default() += doc.word_count;
    }
    for kind in DocumentKind::ALL {
        let s = stats.get_mut(kind);
        if s.count > 0 {
            s.avg_word_count = totals[&kind] as f64 / s.count as f64;
        }
    }
    stats
}

/// Writes cleaned documents and their statistics into `dir`, replacing any
/// previous contents of those two files.
pub fn save_store(dir: &Path, docs: &[CleanDocument]) -> Result<CorpusStats, CorpusError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let docs_path = dir.join(DOCUMENTS_FILE);
    jsonl::write(&docs_path, docs).map_err(io_err(&docs_path))?;
    let stats = corpus_stats(docs);
    let stats_path = dir.join(STATS_FILE);
    let body = serde_json::to_string_pretty(&stats).expect("stats serialize");
    std::fs::write(&stats_path, body + "\n").map_err(io_err(&stats_path))?;
    Ok(stats)
}

pub fn load_store(dir: &Path) -> Result<Vec<CleanDocument>, CorpusError> {
    let path = dir.join(DOCUMENTS_FILE);
    let rows: Vec<(usize, CleanDocument)> = jsonl::read(&path).map_err(|e| match e {
        jsonl::ReadError::Io(source) => CorpusError::Io { path, source },
        jsonl::ReadError::Line(l) => CorpusError::Malformed {
            line: l.line,
            message: l.message,
        },
    })?;
    Ok(rows.into_iter().map(|(_, d)| d).collect())
}
