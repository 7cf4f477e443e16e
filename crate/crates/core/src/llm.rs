//! Chat-completion client for pipeline generation.
//!
//! Everything that talks to a model goes through [`ChatTransport`]. The HTTP
//! implementation speaks the OpenAI-compatible `/chat/completions` protocol;
//! [`ScriptedTransport`] replays canned responses so whole runs can execute
//! offline.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ops::{parse_pipeline, ParseError, Pipeline};
use crate::table::{serialize_markdown, Table};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Position of this request within a batch of samples. Not sent on the
    /// wire; scripted transports use it to pick a response deterministically.
    #[serde(skip)]
    pub sample_index: usize,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model: model.into(),
            messages,
            temperature: None,
            max_tokens: None,
            seed: None,
            sample_index: 0,
        }
    }

    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("scripted transport: {0}")]
    Scripted(String),
}

impl TransportError {
    /// Client errors other than 408/429 are not worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Http { status, .. } => {
                *status == 408 || *status == 429 || *status >= 500
            }
            TransportError::Network(_) => true,
            TransportError::Decode(_) | TransportError::Scripted(_) => false,
        }
    }
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError>;
}

impl<T: ChatTransport + ?Sized> ChatTransport for Arc<T> {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(req)
    }
}

impl<T: ChatTransport + ?Sized> ChatTransport for Box<T> {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(req)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("environment variable {0} holding the API key is not set")]
    AuthMissing(String),
    #[error("all {0} generation requests failed")]
    AllRequestsFailed(usize),
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

fn default_model() -> String {
    "default".into()
}
fn default_temperature() -> f32 {
    0.8
}
fn default_max_tokens() -> u32 {
    2560
}
fn default_n() -> usize {
    5
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_prompt_rows() -> Option<usize> {
    Some(100)
}

/// Sampling and transport settings for pipeline generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    #[serde(default)]
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Number of candidate pipelines sampled per question.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_prompt_rows")]
    pub max_prompt_rows: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.n == 0 {
            return Err(LlmError::Config("n must be at least 1".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(LlmError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }
}

/// Blocking OpenAI-compatible chat-completion client.
pub struct HttpTransport {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: Option<String>,
}

impl HttpTransport {
    /// Resolves the API key from the configured environment variable; a
    /// configured but unset variable is an error before any request is made.
    pub fn from_config(cfg: &GenerationConfig) -> Result<Self, LlmError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .ok()
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| LlmError::AuthMissing(var.clone()))?,
            ),
            None => None,
        };
        Self::new(&cfg.endpoint, api_key, Duration::from_secs_f64(cfg.timeout_secs))
    }

    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        if endpoint.is_empty() {
            return Err(LlmError::Config("endpoint is empty".into()));
        }
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpTransport {
            url,
            api_key,
            client,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let mut builder = self.client.post(&self.url).json(req);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Http {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&body).map_err(|e| TransportError::Decode(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::Decode("response has no message content".into()))
    }
}

/// Canned responses keyed by a substring of the last user message.
///
/// For a matching rule, the response is `outputs[sample_index % len]`. The
/// special output `"!error"` simulates a failed request.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedTransport {
    #[serde(default)]
    pub rules: Vec<ScriptedRule>,
    #[serde(default)]
    pub default: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub outputs: Vec<String>,
}

pub const SCRIPTED_ERROR: &str = "!error";

impl ScriptedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule<S: Into<String>>(mut self, pattern: impl Into<String>, outputs: impl IntoIterator<Item = S>) -> Self {
        self.rules.push(ScriptedRule {
            pattern: pattern.into(),
            outputs: outputs.into_iter().map(Into::into).collect(),
        });
        self
    }

    pub fn from_path(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

impl ChatTransport for ScriptedTransport {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let content = req.last_user_content();
        let out = self
            .rules
            .iter()
            .find(|r| content.contains(&r.pattern) && !r.outputs.is_empty())
            .map(|r| &r.outputs[req.sample_index % r.outputs.len()])
            .or(self.default.as_ref())
            .ok_or_else(|| TransportError::Scripted("no scripted response matches".into()))?;
        if out == SCRIPTED_ERROR {
            return Err(TransportError::Scripted("scripted failure".into()));
        }
        Ok(out.clone())
    }
}

/// Shared append-only JSONL file for request logs.
pub type LogSink = Arc<Mutex<File>>;

pub fn open_log(path: &Path) -> std::io::Result<LogSink> {
    let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    Ok(Arc::new(Mutex::new(f)))
}

/// Appends every request/response pair to a JSONL file.
pub struct LoggingTransport<T> {
    inner: T,
    sink: LogSink,
}

impl<T: ChatTransport> LoggingTransport<T> {
    pub fn new(inner: T, path: &Path) -> std::io::Result<Self> {
        Ok(Self::with_sink(inner, open_log(path)?))
    }

    pub fn with_sink(inner: T, sink: LogSink) -> Self {
        LoggingTransport { inner, sink }
    }
}

impl<T: ChatTransport> ChatTransport for LoggingTransport<T> {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let result = self.inner.complete(req);
        let record = serde_json::json!({
            "request": req,
            "sample_index": req.sample_index,
            "response": result.as_ref().ok(),
            "error": result.as_ref().err().map(ToString::to_string),
        });
        if let Ok(mut f) = self.sink.lock() {
            if let Err(e) = writeln!(f, "{record}") {
                log::warn!("could not write LLM log: {e}");
            }
        }
        result
    }
}

/// Counting semaphore capping in-flight requests across all instances.
#[derive(Debug)]
pub struct RequestLimiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl RequestLimiter {
    pub fn new(permits: usize) -> Arc<Self> {
        Arc::new(RequestLimiter {
            available: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        })
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limiter lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n -= 1;
        Permit { limiter: self }
    }
}

pub struct Permit<'a> {
    limiter: &'a RequestLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.available.lock().expect("limiter lock") += 1;
        self.limiter.freed.notify_one();
    }
}

const OPERATOR_SCHEMA: &str = r#"You prepare tables for question answering. Given a question and a table, output a data preparation pipeline: a JSON array of operator objects applied in order. Each object has an "operation" field, its parameters, and an optional "explanation".

Operators:
- {"operation": "select", "columns": [<column names>]}: keep only these columns.
- {"operation": "filter", "column": <name>, "cmp": "=="|"!="|">"|"<"|">="|"<=", "value": <string or number>}: keep rows whose cell satisfies the comparison.
- {"operation": "sort_by", "column": <name>, "order": "asc"|"desc", "k": <optional integer>}: sort rows, optionally keeping the first k.
- {"operation": "group_by", "column": <name>}: one row per distinct value with its count.
- {"operation": "add_column", "new_column": <name>, "description": <instruction>}: add a column inferred from existing columns.
- {"operation": "clean_column", "column": <name>, "description": <instruction>}: normalize values in a column, such as date formats or units.

Keep every cell needed to answer the question. Respond with a single JSON array and nothing else. Use [] if the table needs no preparation."#;

/// System + user message pair for pipeline generation.
pub fn build_generation_prompt(
    question: &str,
    table: &Table,
    max_rows: Option<usize>,
) -> Result<Vec<ChatMessage>, LlmError> {
    if question.trim().is_empty() {
        return Err(LlmError::EmptyQuestion);
    }
    Ok(vec![
        ChatMessage::system(OPERATOR_SCHEMA),
        ChatMessage::user(format!(
            "Question: {question}\n\nTable:\n{}",
            serialize_markdown(table, max_rows)
        )),
    ])
}

/// Outcome of one sampled candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateOutput {
    pub index: usize,
    pub result: Result<String, TransportError>,
}

fn complete_with_retry<T: ChatTransport + ?Sized>(
    transport: &T,
    req: &ChatRequest,
    retries: u32,
    backoff: Duration,
) -> Result<String, TransportError> {
    let mut attempt = 0;
    loop {
        match transport.complete(req) {
            Ok(text) => return Ok(text),
            Err(e) if attempt < retries && e.is_retryable() => {
                attempt += 1;
                log::debug!("request {} failed ({e}); retry {attempt}/{retries}", req.sample_index);
                std::thread::sleep(backoff * attempt);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Samples `cfg.n` completions concurrently. Output is ordered by sample
/// index; requests that still fail after retries are kept as errors.
pub fn generate_candidates<T: ChatTransport + ?Sized>(
    question: &str,
    table: &Table,
    cfg: &GenerationConfig,
    transport: &T,
    limiter: Option<&RequestLimiter>,
) -> Result<Vec<CandidateOutput>, LlmError> {
    cfg.validate()?;
    let messages = build_generation_prompt(question, table, cfg.max_prompt_rows)?;
    let backoff = Duration::from_millis(cfg.retry_backoff_ms);
    let outputs: Vec<CandidateOutput> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.n)
            .map(|index| {
                let req = ChatRequest {
                    model: cfg.model.clone(),
                    messages: messages.clone(),
                    temperature: Some(cfg.temperature),
                    max_tokens: Some(cfg.max_tokens),
                    seed: cfg.seed.map(|s| s.wrapping_add(index as u64)),
                    sample_index: index,
                };
                s.spawn(move || {
                    let _permit = limiter.map(RequestLimiter::acquire);
                    CandidateOutput {
                        index,
                        result: complete_with_retry(transport, &req, cfg.retries, backoff),
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generation thread panicked"))
            .collect()
    });
    if outputs.iter().all(|o| o.result.is_err()) {
        return Err(LlmError::AllRequestsFailed(cfg.n));
    }
    Ok(outputs)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("no JSON array found in model output")]
    NoJsonFound,
    #[error(transparent)]
    Parse(#[from] ParseError),
}

fn strip_think(raw: &str) -> &str {
    match raw.rfind("</think>") {
        Some(i) => &raw[i + "</think>".len()..],
        None => raw,
    }
}

/// End offset (exclusive) of the bracketed value opening at `start`,
/// skipping brackets inside JSON strings.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (off, ch) in text[start..].char_indices() {
        if in_str {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '[' | '{' => depth += 1,
            ']' | '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(start + off + ch.len_utf8());
                }
            }
            _ => {}
        }
    }
    None
}

/// Finds the first balanced, well-formed JSON array in free text.
pub fn find_json_array(raw: &str) -> Option<serde_json::Value> {
    let text = strip_think(raw);
    text.match_indices('[').find_map(|(start, _)| {
        let end = balanced_end(text, start)?;
        serde_json::from_str::<serde_json::Value>(&text[start..end])
            .ok()
            .filter(serde_json::Value::is_array)
    })
}

/// Locates the first JSON array in model output and parses it as a pipeline.
pub fn extract_pipeline_json(raw: &str) -> Result<Pipeline, ExtractError> {
    let doc = find_json_array(raw).ok_or(ExtractError::NoJsonFound)?;
    Ok(parse_pipeline(&doc)?)
}

/// Parsed candidates plus the reasons any were dropped.
#[derive(Debug, Clone, Default)]
pub struct ExtractedCandidates {
    pub pipelines: Vec<Pipeline>,
    pub dropped: Vec<(usize, String)>,
}

pub fn extract_candidates(outputs: &[CandidateOutput]) -> ExtractedCandidates {
    let mut out = ExtractedCandidates::default();
    for o in outputs {
        match &o.result {
            Ok(text) => match extract_pipeline_json(text) {
                Ok(p) => out.pipelines.push(p),
                Err(e) => out.dropped.push((o.index, e.to_string())),
            },
            Err(e) => out.dropped.push((o.index, format!("request failed: {e}"))),
        }
    }
    out
}

/// Per-key call counter, handy for asserting transport usage in tests.
#[derive(Debug, Default)]
pub struct CallCounter {
    counts: Mutex<HashMap<String, usize>>,
}

impl CallCounter {
    pub fn bump(&self, key: &str) {
        *self.counts.lock().expect("counter lock").entry(key.to_string()).or_default() += 1;
    }

    pub fn get(&self, key: &str) -> usize {
        self.counts.lock().expect("counter lock").get(key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.lock().expect("counter lock").values().sum()
    }
}
