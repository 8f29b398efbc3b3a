//! Answer generation: prompt templates, token-budgeted context packing,
//! generative / extractive / direct answering, and abstention detection.
//!
//! Remote contracts:
//!
//! ```text
//! generative:  POST {"model", "prompt", "max_output_tokens", "temperature"} -> {"text"}
//! extractive:  POST {"question", "context"}                              -> {"start", "end"}
//! ```
//!
//! Extractive spans are half-open character offsets into the context.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::chunker::Chunk;
use crate::tokenize::tokenize;
use crate::transport::{self, HttpTransport, ProviderError, RetryPolicy, Transport};

pub const ABSTENTION_PHRASE: &str = "sorry, i don't know";
pub const CONTEXT_SEPARATOR: &str = "\n\n";

const DAVINCI_LEGAL: &str = "Your task is to answer a question as a legal assistant to the best of your abilities, using the context given in the document. If the country is not mentioned in the question, your response should be related to India. You have knowledge of all laws and legal judgments of India. Be detailed in your answer, provide relevant sections and case laws in your answer only if you are confident that they are correct.\nNote that if you do not know the answer, it is acceptable to say Sorry, I don't know.\nContext:{context} \nQuestion:{question}.";

const FLAN_STEPWISE: &str = "Answer the following question using the context by reasoning step by step. If you don't know the answer, just say Sorry, I don't know:\nContext:{context} \nQuestion:{question}.";

const CONTEXT_SLOT: &str = "{context}";
const QUESTION_SLOT: &str = "{question}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    DavinciLegal,
    FlanStepwise,
    None,
}

/// A prompt with one context slot followed by one question slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub text: &'static str,
}

impl PromptTemplate {
    pub fn get(id: TemplateId) -> Option<Self> {
        let text = match id {
            TemplateId::DavinciLegal => DAVINCI_LEGAL,
            TemplateId::FlanStepwise => FLAN_STEPWISE,
            TemplateId::None => return None,
        };
        Some(Self { id, text })
    }

    fn parts(&self) -> (&'static str, &'static str, &'static str) {
        let c = self.text.find(CONTEXT_SLOT).expect("template has a context slot");
        let q = self.text.find(QUESTION_SLOT).expect("template has a question slot");
        (
            &self.text[..c],
            &self.text[c + CONTEXT_SLOT.len()..q],
            &self.text[q + QUESTION_SLOT.len()..],
        )
    }

    /// Substitutes both slots in one pass; slot markers inside the inputs
    /// are left alone.
    pub fn render(&self, context: &str, question: &str) -> String {
        let (head, mid, tail) = self.parts();
        let mut out = String::with_capacity(self.text.len() + context.len() + question.len());
        out.push_str(head);
        out.push_str(context);
        out.push_str(mid);
        out.push_str(question);
        out.push_str(tail);
        out
    }

    /// Estimated tokens of the template text alone.
    pub fn overhead_tokens(&self) -> usize {
        estimate_tokens(&self.render("", ""))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("no chunks to build a context from")]
    EmptyContext,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("token budget {budget} leaves no room after {reserved} reserved tokens")]
    InsufficientBudget { budget: usize, reserved: usize },
    #[error("generative mode needs a prompt template")]
    MissingTemplate,
    #[error("provider {0} does not support this answer mode")]
    WrongMode(String),
    #[error("empty span ({start}, {end})")]
    EmptySpan { start: usize, end: usize },
    #[error("span ({start}, {end}) out of bounds for context of {len} characters")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
}

pub fn render_prompt(template: TemplateId, context: &str, question: &str) -> Result<String, GenerationError> {
    if question.trim().is_empty() {
        return Err(GenerationError::EmptyQuestion);
    }
    let t = PromptTemplate::get(template).ok_or(GenerationError::MissingTemplate)?;
    Ok(t.render(context, question))
}

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Case-, whitespace- and apostrophe-style-insensitive search for the
/// abstention phrase.
pub fn is_abstention(text: &str) -> bool {
    let normalized: String = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .replace(['\u{2019}', '\u{2018}'], "'");
    normalized.contains(ABSTENTION_PHRASE)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedContext {
    pub text: String,
    pub chunk_ids: Vec<String>,
    pub truncated: bool,
}

/// Joins ranked chunks with a blank line while the estimate stays within
/// `budget − overhead − estimate(question)`. The first chunk is always kept,
/// cut at a character boundary if it alone is too large.
pub fn assemble_context(
    chunks: &[Chunk],
    budget_tokens: usize,
    overhead_tokens: usize,
    question: &str,
) -> Result<PackedContext, GenerationError> {
    let first = chunks.first().ok_or(GenerationError::EmptyContext)?;
    let reserved = overhead_tokens + estimate_tokens(question);
    if budget_tokens <= reserved {
        return Err(GenerationError::InsufficientBudget {
            budget: budget_tokens,
            reserved,
        });
    }
    let available = budget_tokens - reserved;
    let max_chars = available * 4;

    let mut text = String::new();
    let mut chars = first.text.chars().count();
    let mut truncated = false;
    if chars > max_chars {
        let cut = first
            .text
            .char_indices()
            .nth(max_chars)
            .map_or(first.text.len(), |(i, _)| i);
        text.push_str(&first.text[..cut]);
        chars = max_chars;
        truncated = true;
    } else {
        text.push_str(&first.text);
    }
    let mut chunk_ids = vec![first.chunk_id.clone()];

    let sep_chars = CONTEXT_SEPARATOR.chars().count();
    for chunk in &chunks[1..] {
        let next = chars + sep_chars + chunk.text.chars().count();
        if next.div_ceil(4) > available {
            truncated = true;
            break;
        }
        text.push_str(CONTEXT_SEPARATOR);
        text.push_str(&chunk.text);
        chars = next;
        chunk_ids.push(chunk.chunk_id.clone());
    }
    Ok(PackedContext {
        text,
        chunk_ids,
        truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerMode {
    Generative,
    Extractive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub mode: AnswerMode,
    pub abstained: bool,
    pub context_chunk_ids: Vec<String>,
    pub truncated_context: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Remote,
    /// Returns the first sentence of the context, or the question when there
    /// is no context.
    MockEcho,
    /// Always answers with the abstention phrase.
    MockAbstain,
    /// Extractive: the first context sentence sharing a token with the
    /// question, else the first sentence.
    MockExtractive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationProviderSpec {
    pub name: String,
    pub kind: GeneratorKind,
    pub mode: AnswerMode,
    pub token_budget: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: usize,
    #[serde(default)]
    pub temperature: f64,
}

fn default_max_output_tokens() -> usize {
    256
}

impl GenerationProviderSpec {
    pub fn mock(name: impl Into<String>, kind: GeneratorKind, token_budget: usize) -> Self {
        let mode = match kind {
            GeneratorKind::MockExtractive => AnswerMode::Extractive,
            _ => AnswerMode::Generative,
        };
        Self {
            name: name.into(),
            kind,
            mode,
            token_budget,
            endpoint: None,
            model: None,
            auth_env: None,
            retry: RetryPolicy::default(),
            max_output_tokens: default_max_output_tokens(),
            temperature: 0.0,
        }
    }

    fn remote(name: &str, model: &str, mode: AnswerMode, token_budget: usize, auth_env: Option<&str>) -> Self {
        Self {
            kind: GeneratorKind::Remote,
            mode,
            model: Some(model.to_string()),
            auth_env: auth_env.map(str::to_string),
            ..Self::mock(name, GeneratorKind::MockEcho, token_budget)
        }
    }

    /// Built-in profiles by name. Remote profiles need an `endpoint`.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "davinci" => Self::remote("davinci", "text-davinci-003", AnswerMode::Generative, 4097, Some("OPENAI_API_KEY")),
            "chatgpt" => Self::remote("chatgpt", "gpt-3.5-turbo", AnswerMode::Generative, 4096, Some("OPENAI_API_KEY")),
            "flan-ul2" => Self::remote("flan-ul2", "google/flan-ul2", AnswerMode::Generative, 2048, None),
            "longformer" => Self::remote(
                "longformer",
                "valhalla/longformer-base-4096-finetuned-squadv1",
                AnswerMode::Extractive,
                4096,
                None,
            ),
            "mock-echo" => Self::mock("mock-echo", GeneratorKind::MockEcho, 4097),
            "mock-abstain" => Self::mock("mock-abstain", GeneratorKind::MockAbstain, 4097),
            "mock-extractive" => Self::mock("mock-extractive", GeneratorKind::MockExtractive, 4096),
            _ => return None,
        })
    }

    pub fn is_deterministic(&self) -> bool {
        self.kind != GeneratorKind::Remote
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let fail = |message: &str| {
            Err(ProviderError::Unconfigured {
                provider: self.name.clone(),
                message: message.to_string(),
            })
        };
        if self.token_budget == 0 {
            return fail("token_budget must be positive");
        }
        match self.kind {
            GeneratorKind::Remote if self.endpoint.is_none() => fail("no endpoint configured"),
            GeneratorKind::Remote => Ok(()),
            _ if self.endpoint.is_some() => fail("mock providers take no endpoint"),
            GeneratorKind::MockExtractive if self.mode != AnswerMode::Extractive => {
                fail("mock-extractive must use extractive mode")
            }
            GeneratorKind::MockEcho | GeneratorKind::MockAbstain if self.mode != AnswerMode::Generative => {
                fail("generative mocks must use generative mode")
            }
            _ => Ok(()),
        }
    }
}

/// What a generative provider is asked. Remote providers only see `prompt`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub question: String,
    pub context: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub text: String,
    pub token_usage: Option<u64>,
}

pub trait AnswerProvider: Send + Sync {
    fn spec(&self) -> &GenerationProviderSpec;

    fn generate(&self, request: &GenerationRequest) -> Result<Generated, ProviderError>;

    /// Returns a half-open character span into `context`.
    fn extract(&self, question: &str, context: &str) -> Result<(usize, usize), ProviderError>;

    fn calls(&self) -> usize;

    fn name(&self) -> &str {
        &self.spec().name
    }

    fn mode(&self) -> AnswerMode {
        self.spec().mode
    }
}

fn wrong_mode(spec: &GenerationProviderSpec) -> ProviderError {
    ProviderError::InvalidInput {
        provider: spec.name.clone(),
        message: format!("provider runs in {:?} mode", spec.mode),
    }
}

/// Character span of each sentence (through its closing '.') with leading
/// whitespace skipped.
fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut start = 0;
    for i in 0..=chars.len() {
        let at_end = i == chars.len();
        if at_end || chars[i] == '.' {
            let end = if at_end { i } else { i + 1 };
            let mut s = start;
            while s < end && chars[s].is_whitespace() {
                s += 1;
            }
            if s < end {
                spans.push((s, end));
            }
            start = end;
        }
    }
    spans
}

fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut idx = text.char_indices().map(|(i, _)| i).chain([text.len()]);
    let b0 = idx.nth(start).unwrap_or(text.len());
    let b1 = if end > start {
        idx.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b0
    };
    &text[b0..b1]
}

#[derive(Debug)]
pub struct MockAnswerer {
    spec: GenerationProviderSpec,
    calls: AtomicUsize,
}

impl MockAnswerer {
    pub fn new(spec: GenerationProviderSpec) -> Self {
        Self {
            spec,
            calls: AtomicUsize::new(0),
        }
    }
}

impl AnswerProvider for MockAnswerer {
    fn spec(&self) -> &GenerationProviderSpec {
        &self.spec
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Generated, ProviderError> {
        if self.spec.mode != AnswerMode::Generative {
            return Err(wrong_mode(&self.spec));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let text = match self.spec.kind {
            GeneratorKind::MockAbstain => "Sorry, I don't know.".to_string(),
            _ => match request.context.as_deref().filter(|c| !c.trim().is_empty()) {
                Some(ctx) => {
                    let (s, e) = sentence_spans(ctx)[0];
                    char_slice(ctx, s, e).to_string()
                }
                None => request.question.clone(),
            },
        };
        Ok(Generated {
            text,
            token_usage: None,
        })
    }

    fn extract(&self, question: &str, context: &str) -> Result<(usize, usize), ProviderError> {
        if self.spec.mode != AnswerMode::Extractive {
            return Err(wrong_mode(&self.spec));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let spans = sentence_spans(context);
        let q: Vec<String> = tokenize(question);
        let hit = spans.iter().copied().find(|&(s, e)| {
            tokenize(char_slice(context, s, e))
                .iter()
                .any(|t| q.contains(t))
        });
        hit.or_else(|| spans.first().copied()).ok_or_else(|| ProviderError::InvalidInput {
            provider: self.spec.name.clone(),
            message: "empty context".into(),
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

pub struct RemoteAnswerer {
    spec: GenerationProviderSpec,
    transport: Arc<dyn Transport>,
    calls: AtomicUsize,
}

impl RemoteAnswerer {
    pub fn new(spec: GenerationProviderSpec) -> Self {
        Self::with_transport(spec, Arc::new(HttpTransport))
    }

    pub fn with_transport(spec: GenerationProviderSpec, transport: Arc<dyn Transport>) -> Self {
        Self {
            spec,
            transport,
            calls: AtomicUsize::new(0),
        }
    }

    fn post(&self, body: Value) -> Result<Value, ProviderError> {
        let spec = &self.spec;
        let endpoint = spec.endpoint.as_deref().ok_or_else(|| ProviderError::Unconfigured {
            provider: spec.name.clone(),
            message: "no endpoint configured".into(),
        })?;
        let bearer = transport::bearer_from_env(&spec.name, spec.auth_env.as_deref())?;
        let (resp, _) = spec.retry.run(&spec.name, || {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.transport
                .post_json(endpoint, bearer.as_deref(), &body, spec.retry.timeout())
        })?;
        transport::check_error_payload(&spec.name, &resp)?;
        Ok(resp)
    }

    fn format_error(&self, message: &str) -> ProviderError {
        ProviderError::Format {
            provider: self.spec.name.clone(),
            message: message.to_string(),
        }
    }
}

impl AnswerProvider for RemoteAnswerer {
    fn spec(&self) -> &GenerationProviderSpec {
        &self.spec
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Generated, ProviderError> {
        if self.spec.mode != AnswerMode::Generative {
            return Err(wrong_mode(&self.spec));
        }
        let resp = self.post(json!({
            "model": self.spec.model.as_deref().unwrap_or(&self.spec.name),
            "prompt": request.prompt,
            "max_output_tokens": self.spec.max_output_tokens,
            "temperature": self.spec.temperature,
        }))?;
        let text = resp
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| self.format_error("missing text field"))?;
        Ok(Generated {
            text: text.to_string(),
            token_usage: resp.pointer("/usage/total_tokens").and_then(Value::as_u64),
        })
    }

    fn extract(&self, question: &str, context: &str) -> Result<(usize, usize), ProviderError> {
        if self.spec.mode != AnswerMode::Extractive {
            return Err(wrong_mode(&self.spec));
        }
        let resp = self.post(json!({"question": question, "context": context}))?;
        let field = |k: &str| {
            resp.get(k)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| self.format_error(&format!("missing {k} field")))
        };
        Ok((field("start")?, field("end")?))
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

pub fn build_answerer(spec: GenerationProviderSpec) -> Result<Arc<dyn AnswerProvider>, ProviderError> {
    spec.validate()?;
    Ok(match spec.kind {
        GeneratorKind::Remote => Arc::new(RemoteAnswerer::new(spec)),
        _ => Arc::new(MockAnswerer::new(spec)),
    })
}

fn check_question(question: &str) -> Result<(), GenerationError> {
    if question.trim().is_empty() {
        Err(GenerationError::EmptyQuestion)
    } else {
        Ok(())
    }
}

/// Retrieval-augmented generative answer.
pub fn generate_answer(
    provider: &dyn AnswerProvider,
    template: TemplateId,
    question: &str,
    chunks: &[Chunk],
) -> Result<Answer, GenerationError> {
    check_question(question)?;
    if provider.mode() != AnswerMode::Generative {
        return Err(GenerationError::WrongMode(provider.name().to_string()));
    }
    let tmpl = PromptTemplate::get(template).ok_or(GenerationError::MissingTemplate)?;
    let packed = assemble_context(chunks, provider.spec().token_budget, tmpl.overhead_tokens(), question)?;
    let prompt = tmpl.render(&packed.text, question);
    let out = provider.generate(&GenerationRequest {
        prompt,
        question: question.to_string(),
        context: Some(packed.text),
    })?;
    Ok(Answer {
        abstained: is_abstention(&out.text),
        text: out.text,
        mode: AnswerMode::Generative,
        context_chunk_ids: packed.chunk_ids,
        truncated_context: packed.truncated,
        token_usage: out.token_usage,
    })
}

/// Extractive answer: the provider picks a span of the packed context.
pub fn extract_answer(
    provider: &dyn AnswerProvider,
    question: &str,
    chunks: &[Chunk],
) -> Result<Answer, GenerationError> {
    check_question(question)?;
    if provider.mode() != AnswerMode::Extractive {
        return Err(GenerationError::WrongMode(provider.name().to_string()));
    }
    let packed = assemble_context(chunks, provider.spec().token_budget, 0, question)?;
    let (start, end) = provider.extract(question, &packed.text)?;
    let text = span_text(&packed.text, start, end)?;
    Ok(Answer {
        abstained: is_abstention(text),
        text: text.to_string(),
        mode: AnswerMode::Extractive,
        context_chunk_ids: packed.chunk_ids,
        truncated_context: packed.truncated,
        token_usage: None,
    })
}

/// Validates a half-open character span and returns the text it covers.
pub fn span_text(context: &str, start: usize, end: usize) -> Result<&str, GenerationError> {
    let len = context.chars().count();
    if end > len || start > len {
        return Err(GenerationError::SpanOutOfBounds { start, end, len });
    }
    if end <= start {
        return Err(GenerationError::EmptySpan { start, end });
    }
    Ok(char_slice(context, start, end))
}

/// The question alone, no retrieval and no template.
pub fn direct_answer(provider: &dyn AnswerProvider, question: &str) -> Result<Answer, GenerationError> {
    check_question(question)?;
    if provider.mode() != AnswerMode::Generative {
        return Err(GenerationError::WrongMode(provider.name().to_string()));
    }
    let out = provider.generate(&GenerationRequest {
        prompt: question.to_string(),
        question: question.to_string(),
        context: None,
    })?;
    Ok(Answer {
        abstained: is_abstention(&out.text),
        text: out.text,
        mode: AnswerMode::Generative,
        context_chunk_ids: Vec::new(),
        truncated_context: false,
        token_usage: out.token_usage,
    })
}
