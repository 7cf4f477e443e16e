//! Question answering with adaptive rollback.
//!
//! The QA model first sees the fully prepared table. If it replies that no
//! data is available, it is shown the table after only the first operator,
//! and finally the original table, whose answer is returned as is.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::execute;
use crate::llm::{ChatMessage, ChatRequest, ChatTransport, TransportError};
use crate::ops::Pipeline;
use crate::semantic::SemanticExecutor;
use crate::table::{serialize_markdown, Table};

pub const NO_DATA: &str = "No data available";

pub const QA_SYSTEM_PROMPT: &str = "You answer questions about a table given in markdown. \
Reply with the answer only, with no explanation. If the table does not contain the information \
needed to answer, reply exactly: No data available";

/// True iff the response contains "no data available", ignoring case and
/// runs of whitespace.
pub fn detect_no_data(response: &str) -> bool {
    let norm = response.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    norm.contains("no data available")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QaError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{0}")]
    Other(String),
}

pub trait QaClient: Send + Sync {
    fn answer(&self, question: &str, table_text: &str) -> Result<String, QaError>;
}

impl<F> QaClient for F
where
    F: Fn(&str, &str) -> Result<String, QaError> + Send + Sync,
{
    fn answer(&self, question: &str, table_text: &str) -> Result<String, QaError> {
        self(question, table_text)
    }
}

impl<Q: QaClient + ?Sized> QaClient for std::sync::Arc<Q> {
    fn answer(&self, question: &str, table_text: &str) -> Result<String, QaError> {
        (**self).answer(question, table_text)
    }
}

pub struct ChatQaClient<T> {
    transport: T,
    model: String,
    max_tokens: Option<u32>,
}

impl<T: ChatTransport> ChatQaClient<T> {
    pub fn new(transport: T, model: impl Into<String>) -> Self {
        ChatQaClient {
            transport,
            model: model.into(),
            max_tokens: Some(256),
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: Option<u32>) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

pub fn build_qa_messages(question: &str, table_text: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(QA_SYSTEM_PROMPT),
        ChatMessage::user(format!("Table:\n{table_text}\n\nQuestion: {question}")),
    ]
}

impl<T: ChatTransport> QaClient for ChatQaClient<T> {
    fn answer(&self, question: &str, table_text: &str) -> Result<String, QaError> {
        let mut req = ChatRequest::new(self.model.clone(), build_qa_messages(question, table_text));
        req.temperature = Some(0.0);
        req.max_tokens = self.max_tokens;
        Ok(self.transport.complete(&req)?.trim().to_string())
    }
}

/// First 8 bytes of the SHA-256 of the serialized table, hex encoded.
pub fn text_digest(table_text: &str) -> String {
    hex::encode(&Sha256::digest(table_text.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedAnswer {
    pub question: String,
    /// `text_digest` of the table text; absent matches any table.
    #[serde(default)]
    pub table_digest: Option<String>,
    pub response: String,
}

/// QA double keyed by (question, table digest). Digest-specific entries win
/// over wildcard ones; unknown pairs get the default, which is the no-data
/// signal unless configured otherwise.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ScriptedQa {
    #[serde(default)]
    pub answers: Vec<ScriptedAnswer>,
    #[serde(default)]
    pub default: Option<String>,
    #[serde(skip)]
    calls: AtomicUsize,
}

impl ScriptedQa {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn answer_for(mut self, question: impl Into<String>, table_digest: Option<String>, response: impl Into<String>) -> Self {
        self.answers.push(ScriptedAnswer {
            question: question.into(),
            table_digest,
            response: response.into(),
        });
        self
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl QaClient for ScriptedQa {
    fn answer(&self, question: &str, table_text: &str) -> Result<String, QaError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let digest = text_digest(table_text);
        let of_question = || self.answers.iter().filter(|a| a.question == question);
        let hit = of_question()
            .find(|a| a.table_digest.as_deref() == Some(digest.as_str()))
            .or_else(|| of_question().find(|a| a.table_digest.is_none()));
        Ok(match hit {
            Some(a) => a.response.clone(),
            None => self.default.clone().unwrap_or_else(|| NO_DATA.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollbackConfig {
    /// With an empty pipeline all three states show the same table, so go
    /// straight to the original table with a single call.
    #[serde(default = "yes")]
    pub short_circuit_empty: bool,
    /// Row cap for the table shown to the QA model.
    #[serde(default)]
    pub max_table_rows: Option<usize>,
}

fn yes() -> bool {
    true
}

impl Default for RollbackConfig {
    fn default() -> Self {
        RollbackConfig {
            short_circuit_empty: true,
            max_table_rows: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriedTable {
    pub state: u8,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollbackResult {
    pub answer: String,
    pub state_used: u8,
    pub qa_calls: usize,
    pub tables_tried: Vec<TriedTable>,
    pub short_circuited: bool,
    pub ops_executed: usize,
    pub cells_after: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("QA request failed in state {state}: {source}")]
pub struct QaTransportError {
    pub state: u8,
    pub source: QaError,
}

pub fn answer_with_rollback(
    question: &str,
    t: &Table,
    p: &Pipeline,
    qa: &dyn QaClient,
    ex: &dyn SemanticExecutor,
    cfg: &RollbackConfig,
) -> Result<RollbackResult, QaTransportError> {
    // One execution serves both states 1 and 2, so semantic operators are
    // never re-run.
    let trace = execute(p, t, ex);
    let short_circuited = cfg.short_circuit_empty && p.is_empty();
    let states: Vec<(u8, &Table)> = if short_circuited {
        vec![(3, t)]
    } else {
        vec![(1, &trace.final_table), (2, trace.table_after_prefix(1)), (3, t)]
    };

    let mut tried = Vec::new();
    let mut last = None;
    for (state, table) in states {
        let text = serialize_markdown(table, cfg.max_table_rows);
        let reply = qa
            .answer(question, &text)
            .map_err(|source| QaTransportError { state, source })?;
        tried.push(TriedTable {
            state,
            rows: table.num_rows(),
            cols: table.num_columns(),
        });
        let done = state == 3 || !detect_no_data(&reply);
        last = Some((reply, state, table.cell_count()));
        if done {
            break;
        }
    }
    let (answer, state_used, cells_after) = last.expect("at least one state is tried");
    Ok(RollbackResult {
        answer,
        state_used,
        qa_calls: tried.len(),
        tables_tried: tried,
        short_circuited,
        ops_executed: trace.ops_executed(),
        cells_after,
    })
}
