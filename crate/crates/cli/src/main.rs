use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use lexqa::harness::{self, HarnessError, Pipeline, ProviderRegistry, RunConfig, RunOptions};
use lexqa::{bm25, chunker, corpus, metrics, Bm25Index, ChunkerConfig, TokenizerConfig};

#[derive(Parser)]
#[command(name = "lexqa", version, about = "Retrieval-augmented legal QA: ingest, index, answer, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean and store a raw corpus; prints per-kind statistics.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split stored documents into overlapping chunks (JSONL).
    Chunk {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 1000)]
        size: usize,
        #[arg(long, default_value_t = 250)]
        overlap: usize,
        #[arg(long, default_value = ".")]
        sep: String,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a BM25 index over a chunks file.
    IndexBm25 {
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = bm25::DEFAULT_K1)]
        k1: f64,
        #[arg(long, default_value_t = bm25::DEFAULT_B)]
        b: f64,
    },
    /// Embed a chunks file into a vector store.
    IndexVector {
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long)]
        provider: String,
        #[arg(long)]
        out: PathBuf,
        /// Run config whose provider definitions (endpoints etc.) apply.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = harness::DEFAULT_MAX_IN_FLIGHT)]
        max_in_flight: usize,
    },
    /// Answer one question with a run configuration.
    Query {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        question: String,
    },
    /// Evaluate a run configuration over a test set.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        testset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip questions that already have a successful row in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Summarise results files into a TSV table.
    Report {
        /// Results files or glob patterns.
        #[arg(long, required = true, num_args = 1..)]
        results: Vec<String>,
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram of semantic similarity for one results file.
    PlotData {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = harness::DEFAULT_BIN_WIDTH)]
        bin_width: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Provider(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Provider(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Provider(m) => f.write_str(m),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_provider_failure() {
            Self::Provider(e.to_string())
        } else {
            Self::Data(e.to_string())
        }
    }
}

fn data<E: fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn provider<E: fmt::Display>(e: E) -> Failure {
    Failure::Provider(e.to_string())
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, body).map_err(|e| data(format!("cannot write {}: {e}", path.display()))),
        None => io::stdout().write_all(body.as_bytes()).map_err(data),
    }
}

fn expand_results(patterns: &[String]) -> Result<Vec<PathBuf>, Failure> {
    let mut paths = Vec::new();
    for pat in patterns {
        let matches: Vec<PathBuf> = glob::glob(pat)
            .map_err(|e| Failure::Usage(format!("bad pattern {pat:?}: {e}")))?
            .filter_map(Result::ok)
            .collect();
        if matches.is_empty() {
            return Err(data(format!("no results files match {pat:?}")));
        }
        paths.extend(matches);
    }
    paths.sort();
    paths.dedup();
    Ok(paths)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest { corpus: input, out } => {
            let docs = corpus::load_corpus(&input).map_err(data)?;
            let stats = corpus::save_store(&out, &docs).map_err(data)?;
            emit(None, &stats.to_string())
        }
        Command::Chunk { store, size, overlap, sep, out } => {
            let cfg = ChunkerConfig::new(sep, size, overlap).map_err(|e| Failure::Usage(e.to_string()))?;
            let docs = corpus::load_store(&store).map_err(data)?;
            let chunks = chunker::split_corpus(&docs, &cfg);
            eprintln!("{} documents -> {} chunks", docs.len(), chunks.len());
            match out {
                Some(path) => harness::write_chunks(&path, &chunks).map_err(Failure::from),
                None => emit(None, &harness::chunks_jsonl(&chunks)),
            }
        }
        Command::IndexBm25 { chunks, out, k1, b } => {
            let chunks = harness::load_chunks(&chunks)?;
            let index = Bm25Index::build(&chunks, TokenizerConfig::default(), k1, b).map_err(|e| match e {
                bm25::Bm25Error::InvalidParams { .. } => Failure::Usage(e.to_string()),
                _ => data(e),
            })?;
            index.save(&out).map_err(data)?;
            eprintln!("indexed {} chunks", index.len());
            Ok(())
        }
        Command::IndexVector { chunks, provider: name, out, config, max_in_flight } => {
            if max_in_flight == 0 {
                return Err(Failure::Usage("--max-in-flight must be at least 1".into()));
            }
            let registry = match config {
                Some(path) => ProviderRegistry::from_config(&RunConfig::load(&path)?),
                None => ProviderRegistry::default(),
            };
            let embedder = registry.embedder(&name)?;
            let chunks = harness::load_chunks(&chunks)?;
            let store = harness::build_vector_store(&chunks, embedder.as_ref(), max_in_flight)?;
            store.persist(&out).map_err(data)?;
            eprintln!("embedded {} chunks with {name}; provider calls: {}", store.len(), embedder.calls());
            Ok(())
        }
        Command::Query { config, question } => {
            if question.trim().is_empty() {
                return Err(Failure::Usage("--question must not be empty".into()));
            }
            let pipeline = Pipeline::from_config(RunConfig::load(&config)?)?;
            let (answer, retrieved) = pipeline.answer(&question)?;
            let mut body = format!("{}\n", answer.text);
            for r in &retrieved {
                body.push_str(&format!("{}\t{:.6}\n", r.chunk_id, r.score));
            }
            emit(None, &body)
        }
        Command::Eval { config, testset, out, resume } => {
            let pipeline = Pipeline::from_config(RunConfig::load(&config)?)?;
            let cases = harness::load_test_set(&testset)?;
            let opts = RunOptions {
                results_path: Some(out),
                resume,
            };
            let (_, summary) = harness::run(&pipeline, &cases, &opts)?;
            eprintln!(
                "rows: {} resumed, {} executed, {} failed; provider calls: {}",
                summary.resumed,
                summary.executed,
                summary.failed,
                pipeline.provider_calls()
            );
            if summary.executed > 0 && summary.failed == summary.executed {
                return Err(provider("every executed row failed"));
            }
            Ok(())
        }
        Command::Report { results, ratings, out } => {
            let paths = expand_results(&results)?;
            let runs = harness::read_results(&paths)?;
            if runs.is_empty() {
                return Err(data("results files contain no rows"));
            }
            let ratings = ratings
                .map(|p| metrics::read_ratings(&p))
                .transpose()
                .map_err(data)?;
            let report = harness::report(&runs, ratings.as_deref())?;
            for r in &report.rows {
                eprintln!("{}: {} rows, {} failed", r.model, r.rows, r.failed);
            }
            emit(out.as_deref(), &report.to_tsv())
        }
        Command::PlotData { results, out, bin_width } => {
            if !bin_width.is_finite() || bin_width <= 0.0 {
                return Err(Failure::Usage("--bin-width must be positive".into()));
            }
            let runs = harness::read_results(std::slice::from_ref(&results))?;
            let [run] = runs.as_slice() else {
                return Err(data(format!("{} must hold exactly one run", results.display())));
            };
            emit(out.as_deref(), &harness::plot_data(run, bin_width)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
