//! End-to-end evaluation runs: configuration, provider resolution, the
//! retrieve → answer → score pipeline, crash-safe JSONL results, and the
//! report / plot-data emitters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm25::{self, Bm25Error, Bm25Index};
use crate::chunker::Chunk;
use crate::corpus::CorpusError;
use crate::embedding::{build_embedder, Embedder, EmbeddingProviderSpec};
use crate::generation::{
    self, build_answerer, Answer, AnswerMode, AnswerProvider, GenerationError, GenerationProviderSpec,
    TemplateId,
};
use crate::jsonl;
use crate::metrics::{self, MetricsError, Prf, RatingRecord};
use crate::transport::ProviderError;
use crate::vector_store::{self, VectorStore, VectorStoreError};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_BIN_WIDTH: f64 = 0.1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid test set: {0}")]
    TestSet(String),
    #[error("run {0:?} has no successful rows to report")]
    EmptyRun(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Bm25(#[from] Bm25Error),
    #[error(transparent)]
    VectorStore(#[from] VectorStoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl HarnessError {
    /// True when the failure came from a model provider or its transport
    /// rather than from local data.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            Self::Provider(_)
                | Self::Generation(GenerationError::Provider(_))
                | Self::Metrics(MetricsError::Provider(_))
        )
    }

    fn io(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub question: String,
    pub ground_truth: String,
}

/// Reads a JSON array of test cases; ids must be unique and texts non-empty.
pub fn load_test_set(path: &Path) -> Result<Vec<TestCase>, HarnessError> {
    let body = fs::read(path).map_err(HarnessError::io(path))?;
    let cases: Vec<TestCase> =
        serde_json::from_slice(&body).map_err(|e| HarnessError::TestSet(e.to_string()))?;
    validate_test_set(&cases)?;
    Ok(cases)
}

pub fn validate_test_set(cases: &[TestCase]) -> Result<(), HarnessError> {
    let mut seen = HashSet::new();
    for c in cases {
        if c.id.is_empty() || c.question.trim().is_empty() || c.ground_truth.trim().is_empty() {
            return Err(HarnessError::TestSet(format!("case {:?} has an empty field", c.id)));
        }
        if !seen.insert(c.id.as_str()) {
            return Err(HarnessError::TestSet(format!("duplicate case id {:?}", c.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    Embedding,
    Bm25,
    None,
}

/// One retriever × generator setting and the artifacts it reads.
///
/// Relative paths are resolved against the config file's directory by
/// [`RunConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub retriever: RetrieverKind,
    #[serde(default)]
    pub embedder: Option<String>,
    pub generator: String,
    pub prompt: TemplateId,
    /// Defaults to 4 for embedding retrieval and 3 for BM25.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Embedder used for the semantic-similarity metric.
    #[serde(default = "default_semantic_embedder")]
    pub semantic_embedder: String,
    #[serde(default)]
    pub chunks: Option<PathBuf>,
    #[serde(default)]
    pub bm25_index: Option<PathBuf>,
    #[serde(default)]
    pub vector_store: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Provider definitions that override or extend the built-in presets.
    #[serde(default)]
    pub embedders: Vec<EmbeddingProviderSpec>,
    #[serde(default)]
    pub generators: Vec<GenerationProviderSpec>,
}

fn default_semantic_embedder() -> String {
    "mpnet".to_string()
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let body = fs::read(path).map_err(HarnessError::io(path))?;
        let mut cfg: RunConfig =
            serde_json::from_slice(&body).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.chunks, &mut cfg.bm25_index, &mut cfg.vector_store]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn top_k(&self) -> usize {
        self.k.unwrap_or(match self.retriever {
            RetrieverKind::Bm25 => bm25::DEFAULT_TOP_K,
            _ => vector_store::DEFAULT_TOP_K,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(format!("{}: {m}", self.name)));
        if self.name.is_empty() {
            return fail("name is empty");
        }
        if self.k == Some(0) {
            return fail("k must be at least 1");
        }
        if self.max_in_flight == 0 {
            return fail("max_in_flight must be at least 1");
        }
        match self.retriever {
            RetrieverKind::Embedding => {
                if self.embedder.is_none() {
                    return fail("embedding retrieval needs an embedder");
                }
                if self.vector_store.is_none() || self.chunks.is_none() {
                    return fail("embedding retrieval needs vector_store and chunks");
                }
            }
            RetrieverKind::Bm25 => {
                if self.bm25_index.is_none() || self.chunks.is_none() {
                    return fail("bm25 retrieval needs bm25_index and chunks");
                }
            }
            RetrieverKind::None => {
                if self.prompt != TemplateId::None {
                    return fail("direct answering sends the bare question; prompt must be none");
                }
            }
        }
        Ok(())
    }
}

/// Resolves provider names against config-supplied specs, then presets.
#[derive(Debug, Clone, Default)]
pub struct ProviderRegistry {
    embedders: HashMap<String, EmbeddingProviderSpec>,
    generators: HashMap<String, GenerationProviderSpec>,
}

impl ProviderRegistry {
    pub fn from_config(cfg: &RunConfig) -> Self {
        let mut r = Self::default();
        for s in &cfg.embedders {
            r.embedders.insert(s.name.clone(), s.clone());
        }
        for s in &cfg.generators {
            r.generators.insert(s.name.clone(), s.clone());
        }
        r
    }

    pub fn embedder_spec(&self, name: &str) -> Result<EmbeddingProviderSpec, HarnessError> {
        self.embedders
            .get(name)
            .cloned()
            .or_else(|| EmbeddingProviderSpec::preset(name))
            .ok_or_else(|| HarnessError::Config(format!("unknown embedding provider {name:?}")))
    }

    pub fn generator_spec(&self, name: &str) -> Result<GenerationProviderSpec, HarnessError> {
        self.generators
            .get(name)
            .cloned()
            .or_else(|| GenerationProviderSpec::preset(name))
            .ok_or_else(|| HarnessError::Config(format!("unknown generation provider {name:?}")))
    }

    pub fn embedder(&self, name: &str) -> Result<Arc<dyn Embedder>, HarnessError> {
        Ok(build_embedder(self.embedder_spec(name)?)?)
    }

    pub fn answerer(&self, name: &str) -> Result<Arc<dyn AnswerProvider>, HarnessError> {
        Ok(build_answerer(self.generator_spec(name)?)?)
    }
}

pub fn load_chunks(path: &Path) -> Result<Vec<Chunk>, HarnessError> {
    let rows: Vec<(usize, Chunk)> = jsonl::read(path).map_err(|e| match e {
        jsonl::ReadError::Io(source) => HarnessError::Io {
            path: path.to_path_buf(),
            source,
        },
        jsonl::ReadError::Line(l) => HarnessError::Malformed {
            path: path.to_path_buf(),
            line: l.line,
            message: l.message,
        },
    })?;
    Ok(rows.into_iter().map(|(_, c)| c).collect())
}

pub fn write_chunks(path: &Path, chunks: &[Chunk]) -> Result<(), HarnessError> {
    jsonl::write(path, chunks).map_err(HarnessError::io(path))
}

pub fn chunks_jsonl(chunks: &[Chunk]) -> String {
    let mut out = String::new();
    for c in chunks {
        out.push_str(&serde_json::to_string(c).expect("chunks serialize"));
        out.push('\n');
    }
    out
}

/// Maps `f` over `items` on at most `workers` threads, keeping input order.
pub fn bounded_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    thread::scope(|s| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            let tx = tx.clone();
            let (next, f) = (&next, &f);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                if tx.send((i, f(&items[i]))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut out: Vec<(usize, R)> = rx.into_iter().collect();
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

/// Embeds every chunk and stores the vectors under the provider's name.
pub fn build_vector_store(
    chunks: &[Chunk],
    embedder: &dyn Embedder,
    max_in_flight: usize,
) -> Result<VectorStore, HarnessError> {
    let batches: Vec<Vec<String>> = chunks
        .chunks(embedder.spec().batch_size)
        .map(|b| b.iter().map(|c| c.text.clone()).collect())
        .collect();
    let results = bounded_map(&batches, max_in_flight, |b| embedder.embed_batch(b));
    let mut store = VectorStore::new(embedder.dimension(), embedder.name());
    let mut ids = chunks.iter();
    for r in results {
        for v in r?.vectors {
            let chunk = ids.next().expect("one vector per chunk");
            store.add(chunk.chunk_id.clone(), v)?;
        }
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub chunk_id: String,
    pub score: f64,
}

enum Retriever {
    Embedding {
        embedder: Arc<dyn Embedder>,
        store: VectorStore,
    },
    Bm25(Bm25Index),
    None,
}

/// Loaded artifacts plus resolved providers for one run configuration.
pub struct Pipeline {
    config: RunConfig,
    chunks: HashMap<String, Chunk>,
    retriever: Retriever,
    answerer: Arc<dyn AnswerProvider>,
    semantic: Arc<dyn Embedder>,
}

impl Pipeline {
    /// Loads the artifacts named in `config` and builds its providers.
    pub fn from_config(config: RunConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let registry = ProviderRegistry::from_config(&config);
        let chunks = match &config.chunks {
            Some(p) if config.retriever != RetrieverKind::None => load_chunks(p)?,
            _ => Vec::new(),
        };
        let retriever = match config.retriever {
            RetrieverKind::Embedding => {
                let name = config.embedder.as_deref().expect("validated");
                let path = config.vector_store.as_deref().expect("validated");
                if !path.exists() {
                    return Err(HarnessError::MissingArtifact(path.display().to_string()));
                }
                Retriever::Embedding {
                    embedder: registry.embedder(name)?,
                    store: VectorStore::load(path)?,
                }
            }
            RetrieverKind::Bm25 => {
                let path = config.bm25_index.as_deref().expect("validated");
                if !path.exists() {
                    return Err(HarnessError::MissingArtifact(path.display().to_string()));
                }
                Retriever::Bm25(Bm25Index::load(path)?)
            }
            RetrieverKind::None => Retriever::None,
        };
        let answerer = registry.answerer(&config.generator)?;
        let semantic = registry.embedder(&config.semantic_embedder)?;
        Self::assemble(config, chunks, retriever, answerer, semantic)
    }

    /// Builds a pipeline from in-memory parts.
    pub fn new(
        config: RunConfig,
        chunks: Vec<Chunk>,
        index: Option<Bm25Index>,
        store: Option<VectorStore>,
        embedder: Option<Arc<dyn Embedder>>,
        answerer: Arc<dyn AnswerProvider>,
        semantic: Arc<dyn Embedder>,
    ) -> Result<Self, HarnessError> {
        let retriever = match config.retriever {
            RetrieverKind::Embedding => Retriever::Embedding {
                embedder: embedder.ok_or_else(|| HarnessError::Config("embedder required".into()))?,
                store: store.ok_or_else(|| HarnessError::MissingArtifact("vector store".into()))?,
            },
            RetrieverKind::Bm25 => {
                Retriever::Bm25(index.ok_or_else(|| HarnessError::MissingArtifact("bm25 index".into()))?)
            }
            RetrieverKind::None => Retriever::None,
        };
        Self::assemble(config, chunks, retriever, answerer, semantic)
    }

    fn assemble(
        config: RunConfig,
        chunks: Vec<Chunk>,
        retriever: Retriever,
        answerer: Arc<dyn AnswerProvider>,
        semantic: Arc<dyn Embedder>,
    ) -> Result<Self, HarnessError> {
        if let Retriever::Embedding { embedder, store } = &retriever {
            if store.provider_name() != embedder.name() || store.dimension() != embedder.dimension() {
                return Err(HarnessError::Config(format!(
                    "vector store was built with {:?} (d={}), but the run embeds queries with {:?} (d={})",
                    store.provider_name(),
                    store.dimension(),
                    embedder.name(),
                    embedder.dimension()
                )));
            }
        }
        match (config.retriever, answerer.mode()) {
            (RetrieverKind::None, AnswerMode::Extractive) => {
                return Err(HarnessError::Config("extractive answering needs retrieval".into()))
            }
            (RetrieverKind::Embedding | RetrieverKind::Bm25, AnswerMode::Generative)
                if config.prompt == TemplateId::None =>
            {
                return Err(HarnessError::Config("generative answering needs a prompt template".into()))
            }
            _ => {}
        }
        let chunks = chunks.into_iter().map(|c| (c.chunk_id.clone(), c)).collect();
        Ok(Self {
            config,
            chunks,
            retriever,
            answerer,
            semantic,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn answerer(&self) -> &dyn AnswerProvider {
        self.answerer.as_ref()
    }

    pub fn semantic_embedder(&self) -> &dyn Embedder {
        self.semantic.as_ref()
    }

    pub fn query_embedder(&self) -> Option<&dyn Embedder> {
        match &self.retriever {
            Retriever::Embedding { embedder, .. } => Some(embedder.as_ref()),
            _ => None,
        }
    }

    /// Total provider requests issued so far across all providers.
    pub fn provider_calls(&self) -> usize {
        self.answerer.calls()
            + self.semantic.calls()
            + self.query_embedder().map_or(0, |e| e.calls())
    }

    /// True when every provider is a deterministic mock.
    pub fn is_deterministic(&self) -> bool {
        self.answerer.spec().is_deterministic()
            && self.semantic.is_deterministic()
            && self.query_embedder().is_none_or(|e| e.is_deterministic())
    }

    pub fn retrieve(&self, question: &str) -> Result<Vec<Retrieved>, HarnessError> {
        let k = self.config.top_k();
        Ok(match &self.retriever {
            Retriever::Embedding { embedder, store } => {
                let q = embedder.embed_one(question)?;
                store
                    .knn_query(&q, k)?
                    .into_iter()
                    .map(|n| Retrieved {
                        chunk_id: n.chunk_id,
                        score: n.similarity,
                    })
                    .collect()
            }
            Retriever::Bm25(index) => index
                .retrieve_top_k(question, k)
                .into_iter()
                .map(|s| Retrieved {
                    chunk_id: s.chunk_id,
                    score: s.score,
                })
                .collect(),
            Retriever::None => Vec::new(),
        })
    }

    /// Retrieves and answers one question.
    pub fn answer(&self, question: &str) -> Result<(Answer, Vec<Retrieved>), HarnessError> {
        let retrieved = self.retrieve(question)?;
        if self.config.retriever == RetrieverKind::None {
            return Ok((generation::direct_answer(self.answerer(), question)?, retrieved));
        }
        let chunks = retrieved
            .iter()
            .map(|r| {
                self.chunks
                    .get(&r.chunk_id)
                    .cloned()
                    .ok_or_else(|| HarnessError::MissingArtifact(format!("chunk {:?} not in chunks file", r.chunk_id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let answer = match self.answerer.mode() {
            AnswerMode::Generative => {
                generation::generate_answer(self.answerer(), self.config.prompt, question, &chunks)?
            }
            AnswerMode::Extractive => generation::extract_answer(self.answerer(), question, &chunks)?,
        };
        Ok((answer, retrieved))
    }

    fn score_answer(&self, answer: &str, truth: &str) -> Result<Scores, HarnessError> {
        let semantic = if answer.trim().is_empty() {
            0.0
        } else {
            metrics::semantic_similarity(answer, truth, self.semantic_embedder())?
        };
        Ok(Scores {
            rouge1: metrics::rouge_n(answer, truth, 1),
            rouge2: metrics::rouge_n(answer, truth, 2),
            rouge_l: metrics::rouge_l(answer, truth),
            bleu: metrics::bleu(answer, truth, 4),
            semantic,
        })
    }

    /// Runs one test case; failures are captured in the row.
    pub fn evaluate_case(&self, case: &TestCase) -> ResultRow {
        let started = Instant::now();
        let outcome = self.answer(&case.question).and_then(|(answer, retrieved)| {
            let scores = self.score_answer(&answer.text, &case.ground_truth)?;
            Ok((answer, retrieved, scores))
        });
        let wall_ms = if self.is_deterministic() {
            0
        } else {
            started.elapsed().as_millis() as u64
        };
        let mut row = ResultRow {
            run: self.config.name.clone(),
            seed: self.config.seed,
            question_id: case.id.clone(),
            question: case.question.clone(),
            ground_truth: case.ground_truth.clone(),
            answer: None,
            retrieved: Vec::new(),
            scores: None,
            wall_ms,
            error: None,
        };
        match outcome {
            Ok((answer, retrieved, scores)) => {
                row.answer = Some(answer);
                row.retrieved = retrieved;
                row.scores = Some(scores);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub bleu: f64,
    pub semantic: f64,
}

/// One line of a results JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run: String,
    pub seed: u64,
    pub question_id: String,
    pub question: String,
    pub ground_truth: String,
    pub answer: Option<Answer>,
    pub retrieved: Vec<Retrieved>,
    pub scores: Option<Scores>,
    /// Zero when every provider is a deterministic mock.
    pub wall_ms: u64,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none() && self.scores.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: String,
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Rows are appended here as they complete.
    pub results_path: Option<PathBuf>,
    /// Keep successful rows already in `results_path` and skip their cases.
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub resumed: usize,
    pub executed: usize,
    pub failed: usize,
}

/// Evaluates every test case, up to `max_in_flight` at a time.
///
/// With a results path, each row is appended as soon as it completes; once
/// the run finishes the file is rewritten in test-set order so reruns
/// produce identical bytes.
pub fn run(
    pipeline: &Pipeline,
    test_set: &[TestCase],
    opts: &RunOptions,
) -> Result<(RunResult, RunSummary), HarnessError> {
    validate_test_set(test_set)?;
    let name = pipeline.config().name.clone();
    let wanted: HashSet<&str> = test_set.iter().map(|c| c.id.as_str()).collect();

    let mut done: HashMap<String, ResultRow> = HashMap::new();
    if let (true, Some(path)) = (opts.resume, &opts.results_path) {
        if path.exists() {
            for row in read_rows(path)? {
                if row.run == name && row.is_ok() && wanted.contains(row.question_id.as_str()) {
                    done.insert(row.question_id.clone(), row);
                }
            }
        }
    }

    let mut writer = match &opts.results_path {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(HarnessError::io(path))?);
            for case in test_set {
                if let Some(row) = done.get(&case.id) {
                    append_row(&mut w, row).map_err(HarnessError::io(path))?;
                }
            }
            w.flush().map_err(HarnessError::io(path))?;
            Some((path.clone(), w))
        }
        None => None,
    };

    let pending: Vec<&TestCase> = test_set.iter().filter(|c| !done.contains_key(&c.id)).collect();
    let summary_resumed = done.len();
    let (tx, rx) = mpsc::channel::<ResultRow>();
    let next = AtomicUsize::new(0);
    let workers = pipeline.config().max_in_flight.min(pending.len()).max(1);

    let mut fresh: Vec<ResultRow> = Vec::with_capacity(pending.len());
    let mut write_err: Option<HarnessError> = None;
    thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(case) = pending.get(i) else { break };
                if tx.send(pipeline.evaluate_case(case)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Single writer: rows land in completion order.
        for row in rx {
            if let (Some((path, w)), None) = (writer.as_mut(), &write_err) {
                if let Err(e) = append_row(w, &row).and_then(|_| w.flush()) {
                    write_err = Some(HarnessError::io(path)(e));
                }
            }
            fresh.push(row);
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }

    let failed = fresh.iter().filter(|r| !r.is_ok()).count();
    let executed = fresh.len();
    for row in fresh {
        done.insert(row.question_id.clone(), row);
    }
    let rows: Vec<ResultRow> = test_set
        .iter()
        .filter_map(|c| done.remove(&c.id))
        .collect();

    if let Some((path, w)) = writer {
        drop(w);
        rewrite_rows(&path, &rows)?;
    }
    Ok((
        RunResult { run: name, rows },
        RunSummary {
            resumed: summary_resumed,
            executed,
            failed,
        },
    ))
}

fn append_row(w: &mut impl Write, row: &ResultRow) -> io::Result<()> {
    serde_json::to_writer(&mut *w, row)?;
    w.write_all(b"\n")
}

fn rewrite_rows(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("jsonl.tmp");
    jsonl::write(&tmp, rows).map_err(HarnessError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(HarnessError::io(path))
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let rows: Vec<(usize, ResultRow)> = jsonl::read(path).map_err(|e| match e {
        jsonl::ReadError::Io(source) => HarnessError::Io {
            path: path.to_path_buf(),
            source,
        },
        jsonl::ReadError::Line(l) => HarnessError::Malformed {
            path: path.to_path_buf(),
            line: l.line,
            message: l.message,
        },
    })?;
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Reads results files and groups their rows by run name.
pub fn read_results(paths: &[PathBuf]) -> Result<Vec<RunResult>, HarnessError> {
    let mut by_run: BTreeMap<String, Vec<ResultRow>> = BTreeMap::new();
    for p in paths {
        for row in read_rows(p)? {
            by_run.entry(row.run.clone()).or_default().push(row);
        }
    }
    Ok(by_run
        .into_iter()
        .map(|(run, rows)| RunResult { run, rows })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub rows: usize,
    pub failed: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bleu: f64,
    pub semantic: f64,
    pub rating: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub const HEADER: &'static str = "model\trouge1\trouge2\trougeL\tbleu\tsemantic\trating";

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let rating = r.rating.map(|x| format!("{x:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                r.model, r.rouge1, r.rouge2, r.rouge_l, r.bleu, r.semantic, rating
            ));
        }
        out
    }
}

/// Per-run means over successful rows, ordered by run name. Ratings are
/// joined on run name.
pub fn report(results: &[RunResult], ratings: Option<&[RatingRecord]>) -> Result<Report, HarnessError> {
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        let ok: Vec<&Scores> = r.rows.iter().filter(|x| x.is_ok()).filter_map(|x| x.scores.as_ref()).collect();
        if ok.is_empty() {
            return Err(HarnessError::EmptyRun(r.run.clone()));
        }
        let mean = |f: &dyn Fn(&Scores) -> f64| ok.iter().map(|s| f(s)).sum::<f64>() / ok.len() as f64;
        let rating = match ratings {
            Some(recs) => match metrics::aggregate_ratings(recs, &r.run) {
                Ok(d) => d.mean(),
                Err(MetricsError::NoRatings(_)) => None,
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        rows.push(ReportRow {
            model: r.run.clone(),
            rows: ok.len(),
            failed: r.rows.len() - ok.len(),
            rouge1: mean(&|s| s.rouge1.f1),
            rouge2: mean(&|s| s.rouge2.f1),
            rouge_l: mean(&|s| s.rouge_l.f1),
            bleu: mean(&|s| s.bleu),
            semantic: mean(&|s| s.semantic),
            rating,
        });
    }
    rows.sort_by(|a, b| a.model.cmp(&b.model));
    Ok(Report { rows })
}

/// Histogram TSV of semantic similarity over successful rows.
pub fn plot_data(result: &RunResult, bin_width: f64) -> Result<String, HarnessError> {
    let scores: Vec<f64> = result
        .rows
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| r.scores.map(|s| s.semantic))
        .collect();
    Ok(metrics::histogram_tsv(&metrics::similarity_histogram(&scores, bin_width)?))
}
