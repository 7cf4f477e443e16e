//! Semantic operators (`add_column`, `clean_column`) and the executors that
//! back them.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::llm::{find_json_array, ChatMessage, ChatRequest, ChatTransport};
use crate::ops::ExecError;
use crate::table::{Table, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecutorError {
    #[error("no semantic executor is configured")]
    NotConfigured,
    #[error("transport: {0}")]
    Transport(String),
    #[error("model reply unusable: {0}")]
    BadReply(String),
    #[error("rule {pattern:?} failed: {message}")]
    Rule { pattern: String, message: String },
}

impl From<ExecutorError> for ExecError {
    fn from(e: ExecutorError) -> Self {
        ExecError::Executor(e.to_string())
    }
}

/// Values produced by an executor plus any warnings it wants surfaced.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Reply<T> {
    pub values: T,
    pub warnings: Vec<String>,
}

impl<T> Reply<T> {
    pub fn new(values: T) -> Self {
        Reply {
            values,
            warnings: Vec::new(),
        }
    }
}

/// Backend for the semantic operators. Implementations must be usable from
/// several threads at once.
pub trait SemanticExecutor: Send + Sync {
    /// One value per row for a new column. Callers repair length mismatches.
    fn infer_column(
        &self,
        table: &Table,
        new_column: &str,
        description: &str,
    ) -> Result<Reply<Vec<Value>>, ExecutorError>;

    /// Per-row rewrite of `column`; `None` leaves the cell unchanged.
    fn clean_cells(
        &self,
        table: &Table,
        column: &str,
        description: &str,
    ) -> Result<Reply<Vec<Option<Value>>>, ExecutorError>;
}

impl<E: SemanticExecutor + ?Sized> SemanticExecutor for Arc<E> {
    fn infer_column(&self, t: &Table, c: &str, d: &str) -> Result<Reply<Vec<Value>>, ExecutorError> {
        (**self).infer_column(t, c, d)
    }

    fn clean_cells(&self, t: &Table, c: &str, d: &str) -> Result<Reply<Vec<Option<Value>>>, ExecutorError> {
        (**self).clean_cells(t, c, d)
    }
}

/// Table produced by a semantic operator with accumulated warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticOutput {
    pub table: Table,
    pub warnings: Vec<String>,
}

fn repair_len<T: Clone>(mut values: Vec<T>, rows: usize, fill: T, warnings: &mut Vec<String>) -> Vec<T> {
    if values.len() != rows {
        warnings.push(format!(
            "executor returned {} values for {rows} rows; {}",
            values.len(),
            if values.len() < rows { "padded" } else { "truncated" }
        ));
        values.resize(rows, fill);
    }
    values
}

pub fn exec_add_column(
    t: &Table,
    new_column: &str,
    description: &str,
    ex: &dyn SemanticExecutor,
) -> Result<SemanticOutput, ExecError> {
    if t.column_index(new_column).is_some() {
        return Err(ExecError::ColumnExists(new_column.to_string()));
    }
    let Reply { values, mut warnings } = ex.infer_column(t, new_column, description)?;
    let values = repair_len(values, t.num_rows(), Value::Null, &mut warnings);
    let mut columns = t.columns().to_vec();
    columns.push(new_column.to_string());
    let rows = t
        .rows()
        .iter()
        .zip(values)
        .map(|(r, v)| {
            let mut r = r.clone();
            r.push(v);
            r
        })
        .collect();
    let table = Table::new(columns, rows).expect("appended a fresh column");
    Ok(SemanticOutput { table, warnings })
}

pub fn exec_clean_column(
    t: &Table,
    column: &str,
    description: &str,
    ex: &dyn SemanticExecutor,
) -> Result<SemanticOutput, ExecError> {
    let idx = t
        .column_index(column)
        .ok_or_else(|| ExecError::ColumnNotFound(column.to_string()))?;
    if t.num_rows() == 0 {
        return Ok(SemanticOutput {
            table: t.clone(),
            warnings: Vec::new(),
        });
    }
    let Reply { values, mut warnings } = ex.clean_cells(t, column, description)?;
    let values = repair_len(values, t.num_rows(), None, &mut warnings);
    let rows = t
        .rows()
        .iter()
        .zip(values)
        .map(|(r, v)| {
            let mut r = r.clone();
            if let Some(v) = v {
                r[idx] = v;
            }
            r
        })
        .collect();
    let table = Table::new(t.columns().to_vec(), rows).expect("same shape");
    Ok(SemanticOutput { table, warnings })
}

/// Executor used when none is configured: every semantic op fails.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSemanticExecutor;

impl SemanticExecutor for NoSemanticExecutor {
    fn infer_column(&self, _: &Table, _: &str, _: &str) -> Result<Reply<Vec<Value>>, ExecutorError> {
        Err(ExecutorError::NotConfigured)
    }

    fn clean_cells(&self, _: &Table, _: &str, _: &str) -> Result<Reply<Vec<Option<Value>>>, ExecutorError> {
        Err(ExecutorError::NotConfigured)
    }
}

/// Maps one input string to an output; `Ok(None)` means "no value".
pub type RuleFn = Arc<dyn Fn(&str) -> Result<Option<String>, String> + Send + Sync>;

#[derive(Clone)]
pub struct MockRule {
    pub pattern: String,
    pub apply: RuleFn,
}

/// Deterministic test double. A description is handled by the first
/// registered rule whose pattern is a substring of it.
///
/// For `add_column` the rule input is the cell of the first column whose name
/// appears in the description, or the whole row joined with `" | "` when no
/// column is named. For `clean_column` the input is the target cell.
#[derive(Clone, Default)]
pub struct MockExecutor {
    rules: Vec<MockRule>,
    calls: Arc<AtomicUsize>,
}

impl std::fmt::Debug for MockExecutor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockExecutor")
            .field("patterns", &self.rules.iter().map(|r| &r.pattern).collect::<Vec<_>>())
            .field("calls", &self.calls())
            .finish()
    }
}

impl MockExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(
        mut self,
        pattern: impl Into<String>,
        apply: impl Fn(&str) -> Result<Option<String>, String> + Send + Sync + 'static,
    ) -> Self {
        self.rules.push(MockRule {
            pattern: pattern.into(),
            apply: Arc::new(apply),
        });
        self
    }

    /// Rule backed by a literal lookup table; unknown inputs yield no value.
    pub fn mapping<K: Into<String>, V: Into<String>>(
        self,
        pattern: impl Into<String>,
        pairs: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        let map: HashMap<String, String> = pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        self.rule(pattern, move |input| Ok(map.get(input).cloned()))
    }

    /// Rules from a JSON object `{pattern: {input: output, ...}, ...}`,
    /// registered in document order.
    pub fn from_json(doc: &serde_json::Value) -> Result<Self, String> {
        let obj = doc.as_object().ok_or("mock rules must be a JSON object")?;
        let mut ex = MockExecutor::new();
        for (pattern, table) in obj {
            let pairs = table
                .as_object()
                .ok_or_else(|| format!("rule {pattern:?}: expected an object of input -> output"))?
                .iter()
                .map(|(k, v)| {
                    let out = match v {
                        serde_json::Value::String(s) => s.clone(),
                        serde_json::Value::Null => String::new(),
                        other => other.to_string(),
                    };
                    (k.clone(), out)
                })
                .collect::<Vec<_>>();
            ex = ex.mapping(pattern.clone(), pairs);
        }
        Ok(ex)
    }

    pub fn from_path(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let doc: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&doc)
    }

    /// Appends another executor's rules after this one's.
    pub fn extend(mut self, other: MockExecutor) -> Self {
        self.rules.extend(other.rules);
        self
    }

    /// Number of executor invocations so far (shared across clones).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn find(&self, description: &str) -> Option<&MockRule> {
        self.rules.iter().find(|r| description.contains(&r.pattern))
    }

    fn run(rule: &MockRule, input: &str) -> Result<Option<Value>, ExecutorError> {
        (rule.apply)(input)
            .map(|o| o.map(|s| Value::from_cell(&s)))
            .map_err(|message| ExecutorError::Rule {
                pattern: rule.pattern.clone(),
                message,
            })
    }
}

fn no_rule_warning(description: &str) -> String {
    format!("no mock rule matches description {description:?}")
}

impl SemanticExecutor for MockExecutor {
    fn infer_column(&self, t: &Table, _new: &str, description: &str) -> Result<Reply<Vec<Value>>, ExecutorError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let Some(rule) = self.find(description) else {
            return Ok(Reply {
                values: vec![Value::Null; t.num_rows()],
                warnings: vec![no_rule_warning(description)],
            });
        };
        let source = t.columns().iter().position(|c| description.contains(c.as_str()));
        let values = t
            .rows()
            .iter()
            .map(|r| {
                let input = match source {
                    Some(i) => r[i].render(),
                    None => r.iter().map(Value::render).collect::<Vec<_>>().join(" | "),
                };
                Ok(Self::run(rule, &input)?.unwrap_or(Value::Null))
            })
            .collect::<Result<_, ExecutorError>>()?;
        Ok(Reply::new(values))
    }

    fn clean_cells(&self, t: &Table, column: &str, description: &str) -> Result<Reply<Vec<Option<Value>>>, ExecutorError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let Some(rule) = self.find(description) else {
            return Ok(Reply {
                values: vec![None; t.num_rows()],
                warnings: vec![no_rule_warning(description)],
            });
        };
        let idx = t.column_index(column).ok_or_else(|| ExecutorError::BadReply(format!("no column {column:?}")))?;
        let values = t
            .column_values(idx)
            .map(|v| if v.is_null() { Ok(None) } else { Self::run(rule, &v.render()) })
            .collect::<Result<_, _>>()?;
        Ok(Reply::new(values))
    }
}

/// Executor that asks a chat model for all rows in one request and expects
/// a JSON array with exactly one entry per row.
/// Cached replies keyed by (operation, description).
type Memo = HashMap<(String, String), Vec<Option<Value>>>;

pub struct LlmSemanticExecutor<T> {
    transport: T,
    model: String,
    temperature: f32,
    memo: Mutex<Memo>,
}

impl<T: ChatTransport> LlmSemanticExecutor<T> {
    pub fn new(transport: T, model: impl Into<String>) -> Self {
        LlmSemanticExecutor {
            transport,
            model: model.into(),
            temperature: 0.0,
            memo: Mutex::new(HashMap::new()),
        }
    }

    /// Columns mentioned in the instruction, or all columns if none are.
    fn context_columns(t: &Table, description: &str) -> Vec<usize> {
        let named: Vec<usize> = (0..t.num_columns())
            .filter(|&i| description.contains(t.columns()[i].as_str()))
            .collect();
        if named.is_empty() {
            (0..t.num_columns()).collect()
        } else {
            named
        }
    }

    fn rows_listing(t: &Table, cols: &[usize]) -> String {
        t.rows()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cells: Vec<String> = cols
                    .iter()
                    .map(|&c| format!("{}={}", t.columns()[c], r[c].render()))
                    .collect();
                format!("{i}: {}", cells.join("; "))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn ask(&self, t: &Table, instruction: String, system: &str) -> Result<Vec<Option<Value>>, ExecutorError> {
        let key = (t.digest(), instruction.clone());
        if let Some(hit) = self.memo.lock().expect("memo lock").get(&key) {
            return Ok(hit.clone());
        }
        let mut req = ChatRequest::new(
            self.model.clone(),
            vec![ChatMessage::system(system), ChatMessage::user(instruction)],
        );
        req.temperature = Some(self.temperature);
        let text = self
            .transport
            .complete(&req)
            .map_err(|e| ExecutorError::Transport(e.to_string()))?;
        let arr = find_json_array(&text).ok_or_else(|| ExecutorError::BadReply("no JSON array".into()))?;
        let values: Vec<Option<Value>> = arr
            .as_array()
            .expect("find_json_array returns arrays")
            .iter()
            .map(|v| match v {
                serde_json::Value::Null => None,
                serde_json::Value::String(s) => Some(Value::from_cell(s)),
                other => Some(Value::from_cell(&other.to_string())),
            })
            .collect();
        self.memo.lock().expect("memo lock").insert(key, values.clone());
        Ok(values)
    }
}

const ADD_COLUMN_SYSTEM: &str = "You derive a new table column. Reply with only a JSON array containing exactly one value per listed row, in row order. Use null when a value cannot be determined.";
const CLEAN_COLUMN_SYSTEM: &str = "You normalize the values of one table column. Reply with only a JSON array containing exactly one value per listed row, in row order: the cleaned value, or null to leave the cell unchanged.";

impl<T: ChatTransport> SemanticExecutor for LlmSemanticExecutor<T> {
    fn infer_column(&self, t: &Table, new_column: &str, description: &str) -> Result<Reply<Vec<Value>>, ExecutorError> {
        let cols = Self::context_columns(t, description);
        let prompt = format!(
            "New column: {new_column}\nInstruction: {description}\nRows ({}):\n{}",
            t.num_rows(),
            Self::rows_listing(t, &cols)
        );
        let values = self.ask(t, prompt, ADD_COLUMN_SYSTEM)?;
        Ok(Reply::new(values.into_iter().map(|v| v.unwrap_or(Value::Null)).collect()))
    }

    fn clean_cells(&self, t: &Table, column: &str, description: &str) -> Result<Reply<Vec<Option<Value>>>, ExecutorError> {
        let idx = t.column_index(column).ok_or_else(|| ExecutorError::BadReply(format!("no column {column:?}")))?;
        let prompt = format!(
            "Column: {column}\nInstruction: {description}\nRows ({}):\n{}",
            t.num_rows(),
            Self::rows_listing(t, &[idx])
        );
        Ok(Reply::new(self.ask(t, prompt, CLEAN_COLUMN_SYSTEM)?))
    }
}
