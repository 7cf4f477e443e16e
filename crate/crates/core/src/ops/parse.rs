use serde_json::{Map, Value as Json};

use super::{Comparator, OpKind, Operator, OperatorSpec, Pipeline, SortOrder};
use crate::table::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("operator must be a JSON object")]
    NotAnObject,
    #[error("pipeline must be a JSON array")]
    NotAnArray,
    #[error("unknown operator {0:?}")]
    UnknownOperator(String),
    #[error("{op}: missing parameter {param:?}")]
    MissingParam { op: String, param: &'static str },
    #[error("{op}: parameter {param:?} has the wrong type or an invalid value")]
    BadParamType { op: String, param: &'static str },
    #[error("operator {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<ParseError>,
    },
}

impl ParseError {
    /// Index of the offending operator when parsing a pipeline.
    pub fn index(&self) -> Option<usize> {
        match self {
            ParseError::AtIndex { index, .. } => Some(*index),
            _ => None,
        }
    }
}

struct Fields<'a> {
    op: OpKind,
    map: &'a Map<String, Json>,
}

impl<'a> Fields<'a> {
    fn missing(&self, param: &'static str) -> ParseError {
        ParseError::MissingParam {
            op: self.op.name().to_string(),
            param,
        }
    }

    fn bad(&self, param: &'static str) -> ParseError {
        ParseError::BadParamType {
            op: self.op.name().to_string(),
            param,
        }
    }

    fn get(&self, param: &'static str) -> Result<&'a Json, ParseError> {
        match self.map.get(param) {
            None | Some(Json::Null) => Err(self.missing(param)),
            Some(v) => Ok(v),
        }
    }

    fn string(&self, param: &'static str) -> Result<String, ParseError> {
        self.get(param)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.bad(param))
    }

    fn non_empty_string(&self, param: &'static str) -> Result<String, ParseError> {
        let s = self.string(param)?;
        if s.trim().is_empty() {
            return Err(self.bad(param));
        }
        Ok(s)
    }
}

fn scalar_value(v: &Json) -> Option<Value> {
    match v {
        Json::Null => Some(Value::Null),
        Json::String(s) => Some(Value::from_cell(s)),
        Json::Number(n) => Some(Value::from_cell(&n.to_string())),
        Json::Bool(b) => Some(Value::Text(b.to_string())),
        _ => None,
    }
}

/// Parses one operator object. Unknown extra fields are ignored.
pub fn parse_operator(doc: &Json) -> Result<OperatorSpec, ParseError> {
    let map = doc.as_object().ok_or(ParseError::NotAnObject)?;
    let name = match map.get("operation") {
        Some(Json::String(s)) => s.as_str(),
        Some(_) => {
            return Err(ParseError::BadParamType {
                op: "?".into(),
                param: "operation",
            })
        }
        None => {
            return Err(ParseError::MissingParam {
                op: "?".into(),
                param: "operation",
            })
        }
    };
    let kind = OpKind::from_name(name).ok_or_else(|| ParseError::UnknownOperator(name.into()))?;
    let f = Fields { op: kind, map };

    let op = match kind {
        OpKind::Select => {
            let columns: Vec<String> = match f.get("columns")? {
                Json::String(s) => vec![s.clone()],
                Json::Array(items) => items
                    .iter()
                    .map(|c| c.as_str().map(str::to_string))
                    .collect::<Option<_>>()
                    .ok_or_else(|| f.bad("columns"))?,
                _ => return Err(f.bad("columns")),
            };
            if columns.is_empty() {
                return Err(f.bad("columns"));
            }
            Operator::Select { columns }
        }
        OpKind::Filter => {
            let column = f.string("column")?;
            let cmp = Comparator::from_symbol(f.string("cmp")?.trim()).ok_or_else(|| f.bad("cmp"))?;
            let value = match map.get("value") {
                None => return Err(f.missing("value")),
                Some(v) => scalar_value(v).ok_or_else(|| f.bad("value"))?,
            };
            Operator::Filter { column, cmp, value }
        }
        OpKind::SortBy => {
            let column = f.string("column")?;
            let order = match map.get("order") {
                None | Some(Json::Null) => SortOrder::Asc,
                Some(Json::String(s)) => match s.to_ascii_lowercase().as_str() {
                    "asc" => SortOrder::Asc,
                    "desc" => SortOrder::Desc,
                    _ => return Err(f.bad("order")),
                },
                Some(_) => return Err(f.bad("order")),
            };
            let k = match map.get("k") {
                None | Some(Json::Null) => None,
                Some(Json::Number(n)) => Some(n.as_u64().ok_or_else(|| f.bad("k"))?),
                Some(Json::String(s)) => Some(s.trim().parse::<u64>().map_err(|_| f.bad("k"))?),
                Some(_) => return Err(f.bad("k")),
            };
            if k == Some(0) {
                return Err(f.bad("k"));
            }
            Operator::SortBy {
                column,
                order,
                k: k.map(|k| k as usize),
            }
        }
        OpKind::GroupBy => Operator::GroupBy {
            column: f.string("column")?,
        },
        OpKind::AddColumn => Operator::AddColumn {
            new_column: f.non_empty_string("new_column")?,
            description: f.non_empty_string("description")?,
        },
        OpKind::CleanColumn => Operator::CleanColumn {
            column: f.string("column")?,
            description: f.non_empty_string("description")?,
        },
    };
    let explanation = map
        .get("explanation")
        .and_then(Json::as_str)
        .map(str::to_string);
    Ok(OperatorSpec { op, explanation })
}

/// Parses a JSON array of operator objects, preserving order.
pub fn parse_pipeline(doc: &Json) -> Result<Pipeline, ParseError> {
    let items = doc.as_array().ok_or(ParseError::NotAnArray)?;
    items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            parse_operator(item).map_err(|e| ParseError::AtIndex {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Pipeline::new)
}
