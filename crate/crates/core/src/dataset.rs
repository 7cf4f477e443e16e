//! JSONL datasets of question/table/answer instances.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::reward::{AnswerSet, Matching};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub question: String,
    pub table: Table,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<String>>,
}

impl Instance {
    pub fn answer_set(&self, matching: Matching) -> Option<AnswerSet> {
        self.answers
            .as_ref()
            .and_then(|a| AnswerSet::new(a.clone(), matching).ok())
    }
}

/// A dataset line that could not be used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Parses JSONL, one instance per non-blank line. Malformed lines and
/// duplicate ids are reported (1-based line numbers) and skipped.
pub fn parse_jsonl(text: &str) -> (Vec<Instance>, Vec<LineError>) {
    let mut instances = Vec::new();
    let mut errors = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Instance>(line) {
            Ok(inst) if !ids.insert(inst.id.clone()) => errors.push(LineError {
                line: i + 1,
                message: format!("duplicate instance id {:?}", inst.id),
            }),
            Ok(inst) => instances.push(inst),
            Err(e) => errors.push(LineError {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    (instances, errors)
}

pub fn to_jsonl(instances: &[Instance]) -> String {
    instances
        .iter()
        .map(|i| serde_json::to_string(i).expect("instance serializes") + "\n")
        .collect()
}
