//! Operator algebra: typed operator specs parsed from JSON objects, the
//! structured operators, and canonical keys used for merge identity.

mod parse;
mod structured;

use std::fmt;

use serde_json::{json, Map};

use crate::table::{parse_decimal, Value};

pub use parse::{parse_operator, parse_pipeline, ParseError};
pub use structured::{exec_filter, exec_group_by, exec_select, exec_sort_by, predicate_holds};

/// Errors raised while executing a single operator.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("column {0:?} not found")]
    ColumnNotFound(String),
    #[error("none of the requested columns exist")]
    NoValidColumns,
    #[error("column {0:?} already exists")]
    ColumnExists(String),
    #[error("semantic executor failure: {0}")]
    Executor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Comparator {
    Eq,
    Ne,
    Gt,
    Lt,
    Ge,
    Le,
}

impl Comparator {
    pub const ALL: [Comparator; 6] = [
        Comparator::Eq,
        Comparator::Ne,
        Comparator::Gt,
        Comparator::Lt,
        Comparator::Ge,
        Comparator::Le,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
            Comparator::Gt => ">",
            Comparator::Lt => "<",
            Comparator::Ge => ">=",
            Comparator::Le => "<=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Comparator> {
        Comparator::ALL.into_iter().find(|c| c.symbol() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SortOrder {
    Asc,
    Desc,
}

impl SortOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            SortOrder::Asc => "asc",
            SortOrder::Desc => "desc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Select,
    Filter,
    SortBy,
    GroupBy,
    AddColumn,
    CleanColumn,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Select,
        OpKind::Filter,
        OpKind::SortBy,
        OpKind::GroupBy,
        OpKind::AddColumn,
        OpKind::CleanColumn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Select => "select",
            OpKind::Filter => "filter",
            OpKind::SortBy => "sort_by",
            OpKind::GroupBy => "group_by",
            OpKind::AddColumn => "add_column",
            OpKind::CleanColumn => "clean_column",
        }
    }

    pub fn from_name(s: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Semantic operators are executed through a [`crate::semantic::SemanticExecutor`].
    pub fn is_semantic(self) -> bool {
        matches!(self, OpKind::AddColumn | OpKind::CleanColumn)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Kind-specific operator parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operator {
    Select {
        columns: Vec<String>,
    },
    Filter {
        column: String,
        cmp: Comparator,
        value: Value,
    },
    SortBy {
        column: String,
        order: SortOrder,
        k: Option<usize>,
    },
    GroupBy {
        column: String,
    },
    AddColumn {
        new_column: String,
        description: String,
    },
    CleanColumn {
        column: String,
        description: String,
    },
}

impl Operator {
    pub fn kind(&self) -> OpKind {
        match self {
            Operator::Select { .. } => OpKind::Select,
            Operator::Filter { .. } => OpKind::Filter,
            Operator::SortBy { .. } => OpKind::SortBy,
            Operator::GroupBy { .. } => OpKind::GroupBy,
            Operator::AddColumn { .. } => OpKind::AddColumn,
            Operator::CleanColumn { .. } => OpKind::CleanColumn,
        }
    }
}

/// One parsed operator object: parameters plus the generator's optional
/// free-text explanation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorSpec {
    pub op: Operator,
    pub explanation: Option<String>,
}

impl OperatorSpec {
    pub fn new(op: Operator) -> Self {
        OperatorSpec {
            op,
            explanation: None,
        }
    }

    pub fn with_explanation(mut self, text: impl Into<String>) -> Self {
        self.explanation = Some(text.into());
        self
    }

    pub fn kind(&self) -> OpKind {
        self.op.kind()
    }

    pub fn select<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self::new(Operator::Select {
            columns: columns.into_iter().map(Into::into).collect(),
        })
    }

    pub fn filter(column: impl Into<String>, cmp: Comparator, value: impl Into<Value>) -> Self {
        Self::new(Operator::Filter {
            column: column.into(),
            cmp,
            value: value.into(),
        })
    }

    pub fn sort_by(column: impl Into<String>, order: SortOrder, k: Option<usize>) -> Self {
        Self::new(Operator::SortBy {
            column: column.into(),
            order,
            k,
        })
    }

    pub fn group_by(column: impl Into<String>) -> Self {
        Self::new(Operator::GroupBy {
            column: column.into(),
        })
    }

    pub fn add_column(new_column: impl Into<String>, description: impl Into<String>) -> Self {
        Self::new(Operator::AddColumn {
            new_column: new_column.into(),
            description: description.into(),
        })
    }

    pub fn clean_column(column: impl Into<String>, description: impl Into<String>) -> Self {
        Self::new(Operator::CleanColumn {
            column: column.into(),
            description: description.into(),
        })
    }

    /// Deterministic identity string: kind plus parameters, explanation
    /// excluded, values canonicalized (a numeric string and the equal number
    /// produce the same key).
    pub fn canonical_key(&self) -> String {
        let q = |s: &str| serde_json::to_string(s).expect("string encodes");
        match &self.op {
            Operator::Select { columns } => {
                let cols: Vec<String> = columns.iter().map(|c| q(c)).collect();
                format!("select(columns=[{}])", cols.join(","))
            }
            Operator::Filter { column, cmp, value } => format!(
                "filter(column={},cmp={},value={})",
                q(column),
                q(cmp.symbol()),
                canonical_value(value)
            ),
            Operator::SortBy { column, order, k } => format!(
                "sort_by(column={},order={},k={})",
                q(column),
                order.as_str(),
                k.map_or_else(|| "none".to_string(), |k| k.to_string())
            ),
            Operator::GroupBy { column } => format!("group_by(column={})", q(column)),
            Operator::AddColumn {
                new_column,
                description,
            } => format!(
                "add_column(new_column={},description={})",
                q(new_column),
                q(description)
            ),
            Operator::CleanColumn {
                column,
                description,
            } => format!(
                "clean_column(column={},description={})",
                q(column),
                q(description)
            ),
        }
    }

    /// Wire form, following the operator JSON schema.
    pub fn to_json(&self) -> serde_json::Value {
        let mut m = Map::new();
        m.insert("operation".into(), json!(self.kind().name()));
        match &self.op {
            Operator::Select { columns } => {
                m.insert("columns".into(), json!(columns));
            }
            Operator::Filter { column, cmp, value } => {
                m.insert("column".into(), json!(column));
                m.insert("cmp".into(), json!(cmp.symbol()));
                m.insert("value".into(), value_to_json(value));
            }
            Operator::SortBy { column, order, k } => {
                m.insert("column".into(), json!(column));
                m.insert("order".into(), json!(order.as_str()));
                if let Some(k) = k {
                    m.insert("k".into(), json!(k));
                }
            }
            Operator::GroupBy { column } => {
                m.insert("column".into(), json!(column));
            }
            Operator::AddColumn {
                new_column,
                description,
            } => {
                m.insert("new_column".into(), json!(new_column));
                m.insert("description".into(), json!(description));
            }
            Operator::CleanColumn {
                column,
                description,
            } => {
                m.insert("column".into(), json!(column));
                m.insert("description".into(), json!(description));
            }
        }
        if let Some(e) = &self.explanation {
            m.insert("explanation".into(), json!(e));
        }
        serde_json::Value::Object(m)
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_key())
    }
}

fn canonical_value(v: &Value) -> String {
    match v {
        Value::Null => "null".to_string(),
        Value::Number(_) => format!("num:{}", v.render()),
        Value::Text(s) => match parse_decimal(s) {
            Some(d) => format!("num:{}", crate::table::render_decimal(&d)),
            None => format!("text:{}", serde_json::to_string(s).expect("string encodes")),
        },
    }
}

/// Numbers become JSON numbers when that is lossless, strings otherwise.
pub(crate) fn value_to_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Null => serde_json::Value::Null,
        Value::Text(s) => json!(s),
        Value::Number(_) => {
            let s = v.render();
            if let Ok(i) = s.parse::<i64>() {
                return json!(i);
            }
            match serde_json::from_str::<serde_json::Number>(&s) {
                Ok(n) if n.to_string() == s => serde_json::Value::Number(n),
                _ => json!(s),
            }
        }
    }
}

/// An ordered operator sequence; the empty pipeline is the identity.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pipeline {
    pub ops: Vec<OperatorSpec>,
}

impl Pipeline {
    pub fn new(ops: Vec<OperatorSpec>) -> Self {
        Pipeline { ops }
    }

    pub fn identity() -> Self {
        Pipeline::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, OperatorSpec> {
        self.ops.iter()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(self.ops.iter().map(OperatorSpec::to_json).collect())
    }
}

impl FromIterator<OperatorSpec> for Pipeline {
    fn from_iter<I: IntoIterator<Item = OperatorSpec>>(iter: I) -> Self {
        Pipeline::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a Pipeline {
    type Item = &'a OperatorSpec;
    type IntoIter = std::slice::Iter<'a, OperatorSpec>;

    fn into_iter(self) -> Self::IntoIter {
        self.ops.iter()
    }
}
