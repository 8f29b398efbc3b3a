//! Embedding providers: a remote JSON-over-HTTP client and a deterministic
//! hashed bag-of-features mock for offline runs.
//!
//! Remote contract:
//!
//! ```text
//! POST {"model": "...", "input": ["...", ...]}
//!   -> {"data": [{"index": 0, "embedding": [...]}, ...], "usage": {"total_tokens": n}}
//! ```

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::clean_text;
use crate::tokenize::tokenize;
use crate::transport::{self, HttpTransport, ProviderError, RetryPolicy, Transport};

pub const DEFAULT_MOCK_DIMENSION: usize = 256;
pub const INSTRUCTOR_INSTRUCTION: &str = "Generate embeddings for the document retrieval system.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderSpec {
    pub name: String,
    pub kind: EmbedderKind,
    pub dimension: usize,
    /// Prepended, followed by a space, to every input text.
    #[serde(default)]
    pub instruction: Option<String>,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Model name sent to the endpoint; defaults to `name`.
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Hash seed for the mock.
    #[serde(default)]
    pub seed: u64,
}

fn default_batch_size() -> usize {
    64
}

impl EmbeddingProviderSpec {
    pub fn mock(name: impl Into<String>, dimension: usize) -> Self {
        Self {
            name: name.into(),
            kind: EmbedderKind::Mock,
            dimension,
            instruction: None,
            endpoint: None,
            model: None,
            auth_env: None,
            batch_size: default_batch_size(),
            retry: RetryPolicy::default(),
            seed: 0,
        }
    }

    fn remote(name: &str, model: &str, dimension: usize, auth_env: Option<&str>) -> Self {
        Self {
            kind: EmbedderKind::Remote,
            model: Some(model.to_string()),
            auth_env: auth_env.map(str::to_string),
            ..Self::mock(name, dimension)
        }
    }

    /// Built-in profiles, looked up by name. Remote profiles still need an
    /// `endpoint` before they can be used.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "ada" => Self::remote("ada", "text-embedding-ada-002", 1536, Some("OPENAI_API_KEY")),
            "instructor-xl" => Self {
                instruction: Some(INSTRUCTOR_INSTRUCTION.to_string()),
                ..Self::remote("instructor-xl", "hkunlp/instructor-xl", 768, None)
            },
            "mpnet" => Self::remote("mpnet", "sentence-transformers/all-mpnet-base-v2", 768, None),
            "mock" => Self::mock("mock", DEFAULT_MOCK_DIMENSION),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let fail = |message: &str| {
            Err(ProviderError::Unconfigured {
                provider: self.name.clone(),
                message: message.to_string(),
            })
        };
        if self.dimension == 0 || self.batch_size == 0 {
            return fail("dimension and batch_size must be positive");
        }
        match self.kind {
            EmbedderKind::Mock if self.endpoint.is_some() => fail("mock providers take no endpoint"),
            EmbedderKind::Mock if self.dimension < 8 => fail("mock dimension must be at least 8"),
            EmbedderKind::Remote if self.endpoint.is_none() => fail("no endpoint configured"),
            _ => Ok(()),
        }
    }

    fn prepare(&self, text: &str) -> String {
        match &self.instruction {
            Some(instr) => format!("{instr} {text}"),
            None => text.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatchResult {
    pub vectors: Vec<Vec<f64>>,
    pub token_usage: Option<u64>,
    /// Largest number of attempts any underlying request needed.
    pub attempts: u32,
}

pub trait Embedder: Send + Sync {
    fn spec(&self) -> &EmbeddingProviderSpec;

    /// Embeds one batch of already-prepared texts (instruction applied).
    fn embed_prepared(&self, texts: &[String]) -> Result<EmbeddingBatchResult, ProviderError>;

    /// Number of provider requests issued so far.
    fn calls(&self) -> usize;

    fn name(&self) -> &str {
        &self.spec().name
    }

    fn dimension(&self) -> usize {
        self.spec().dimension
    }

    fn is_deterministic(&self) -> bool {
        self.spec().kind == EmbedderKind::Mock
    }

    /// One vector per input text, in order. Splits into `batch_size`
    /// requests and checks count and dimension of every response.
    fn embed_batch(&self, texts: &[String]) -> Result<EmbeddingBatchResult, ProviderError> {
        let spec = self.spec();
        let invalid = |message: String| ProviderError::InvalidInput {
            provider: spec.name.clone(),
            message,
        };
        if texts.is_empty() {
            return Err(invalid("no texts to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| clean_text(t).is_empty()) {
            return Err(invalid(format!("text {i} is empty")));
        }
        let prepared: Vec<String> = texts.iter().map(|t| spec.prepare(t)).collect();
        let mut out = EmbeddingBatchResult {
            vectors: Vec::with_capacity(texts.len()),
            token_usage: None,
            attempts: 0,
        };
        for batch in prepared.chunks(spec.batch_size) {
            let r = self.embed_prepared(batch)?;
            if r.vectors.len() != batch.len() {
                return Err(ProviderError::Format {
                    provider: spec.name.clone(),
                    message: format!("expected {} embeddings, got {}", batch.len(), r.vectors.len()),
                });
            }
            if let Some(v) = r.vectors.iter().find(|v| v.len() != spec.dimension) {
                return Err(ProviderError::DimensionMismatch {
                    provider: spec.name.clone(),
                    expected: spec.dimension,
                    got: v.len(),
                });
            }
            out.vectors.extend(r.vectors);
            out.attempts = out.attempts.max(r.attempts);
            if let Some(u) = r.token_usage {
                *out.token_usage.get_or_insert(0) += u;
            }
        }
        Ok(out)
    }

    fn embed_one(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let mut r = self.embed_batch(&[text.to_string()])?;
        Ok(r.vectors.pop().expect("one vector per input"))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, tag: u8, feature: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for byte in seed.to_le_bytes().into_iter().chain([tag]).chain(feature.bytes()) {
        h ^= byte as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashed bag of tokens and intra-token character bigrams, L2-normalized.
///
/// Texts without any token all share one fixed bucket, so every output has
/// unit norm.
pub fn mock_embed_seeded(text: &str, dimension: usize, seed: u64) -> Vec<f64> {
    assert!(dimension >= 8, "mock dimension must be at least 8");
    let bucket = |tag: u8, feature: &str| (fnv1a(seed, tag, feature) % dimension as u64) as usize;
    let mut hits = Vec::new();
    for token in tokenize(text) {
        hits.push(bucket(b't', &token));
        let chars: Vec<char> = token.chars().collect();
        for w in chars.windows(2) {
            hits.push(bucket(b'b', &w.iter().collect::<String>()));
        }
    }
    if hits.is_empty() {
        hits.push(bucket(b'e', ""));
    }
    let mut v = vec![0.0f64; dimension];
    for i in hits {
        v[i] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn mock_embed(text: &str, dimension: usize) -> Vec<f64> {
    mock_embed_seeded(text, dimension, 0)
}

#[derive(Debug)]
pub struct MockEmbedder {
    spec: EmbeddingProviderSpec,
    calls: AtomicUsize,
}

impl MockEmbedder {
    pub fn new(spec: EmbeddingProviderSpec) -> Self {
        Self {
            spec,
            calls: AtomicUsize::new(0),
        }
    }
}

impl Embedder for MockEmbedder {
    fn spec(&self) -> &EmbeddingProviderSpec {
        &self.spec
    }

    fn embed_prepared(&self, texts: &[String]) -> Result<EmbeddingBatchResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(EmbeddingBatchResult {
            vectors: texts
                .iter()
                .map(|t| mock_embed_seeded(t, self.spec.dimension, self.spec.seed))
                .collect(),
            token_usage: None,
            attempts: 1,
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

pub struct RemoteEmbedder {
    spec: EmbeddingProviderSpec,
    transport: Arc<dyn Transport>,
    calls: AtomicUsize,
}

impl RemoteEmbedder {
    pub fn new(spec: EmbeddingProviderSpec) -> Self {
        Self::with_transport(spec, Arc::new(HttpTransport))
    }

    pub fn with_transport(spec: EmbeddingProviderSpec, transport: Arc<dyn Transport>) -> Self {
        Self {
            spec,
            transport,
            calls: AtomicUsize::new(0),
        }
    }

    fn parse(&self, body: &Value, expected: usize) -> Result<(Vec<Vec<f64>>, Option<u64>), ProviderError> {
        let name = &self.spec.name;
        transport::check_error_payload(name, body)?;
        let format = |message: String| ProviderError::Format {
            provider: name.clone(),
            message,
        };
        let data = body
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| format("missing data array".into()))?;
        let mut slots: Vec<Option<Vec<f64>>> = vec![None; expected];
        for item in data {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .ok_or_else(|| format("item without index".into()))? as usize;
            let embedding: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| format(format!("item {index} without embedding")))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| format(format!("item {index}: non-numeric value"))))
                .collect::<Result<_, _>>()?;
            let slot = slots
                .get_mut(index)
                .ok_or_else(|| format(format!("index {index} out of range")))?;
            if slot.replace(embedding).is_some() {
                return Err(format(format!("duplicate index {index}")));
            }
        }
        let vectors = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| format(format!("missing embedding {i}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let usage = body
            .pointer("/usage/total_tokens")
            .and_then(Value::as_u64);
        Ok((vectors, usage))
    }
}

impl Embedder for RemoteEmbedder {
    fn spec(&self) -> &EmbeddingProviderSpec {
        &self.spec
    }

    fn embed_prepared(&self, texts: &[String]) -> Result<EmbeddingBatchResult, ProviderError> {
        let spec = &self.spec;
        let endpoint = spec.endpoint.as_deref().ok_or_else(|| ProviderError::Unconfigured {
            provider: spec.name.clone(),
            message: "no endpoint configured".into(),
        })?;
        let bearer = transport::bearer_from_env(&spec.name, spec.auth_env.as_deref())?;
        let body = json!({
            "model": spec.model.as_deref().unwrap_or(&spec.name),
            "input": texts,
        });
        let (resp, attempts) = spec.retry.run(&spec.name, || {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.transport
                .post_json(endpoint, bearer.as_deref(), &body, spec.retry.timeout())
        })?;
        let (vectors, token_usage) = self.parse(&resp, texts.len())?;
        Ok(EmbeddingBatchResult {
            vectors,
            token_usage,
            attempts,
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Builds the provider described by `spec`, validating it first.
pub fn build_embedder(spec: EmbeddingProviderSpec) -> Result<Arc<dyn Embedder>, ProviderError> {
    spec.validate()?;
    Ok(match spec.kind {
        EmbedderKind::Mock => Arc::new(MockEmbedder::new(spec)),
        EmbedderKind::Remote => Arc::new(RemoteEmbedder::new(spec)),
    })
}
