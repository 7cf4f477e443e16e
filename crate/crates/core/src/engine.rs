//! Pipeline execution with a full trace of intermediate tables.
//!
//! The first operator that fails ends execution: it is recorded as `Failed`,
//! everything after it as `Skipped`, and the final table is the last one that
//! was produced successfully.

use std::sync::Arc;

use serde_json::json;

use crate::ops::{self, ExecError, Operator, OperatorSpec, Pipeline};
use crate::semantic::{exec_add_column, exec_clean_column, SemanticExecutor};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepStatus {
    Ok,
    Failed(ExecError),
    Skipped,
}

impl StepStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, StepStatus::Ok)
    }

    pub fn label(&self) -> &'static str {
        match self {
            StepStatus::Ok => "ok",
            StepStatus::Failed(_) => "failed",
            StepStatus::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub spec: OperatorSpec,
    pub status: StepStatus,
    /// Output of this step; for failed or skipped steps, the last good table.
    pub table_after: Arc<Table>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub initial: Arc<Table>,
    pub steps: Vec<TraceStep>,
    pub final_table: Arc<Table>,
    pub truncated_at: Option<usize>,
}

impl ExecutionTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Table after the first `k` operators, under the same truncation rule.
    pub fn table_after_prefix(&self, k: usize) -> &Arc<Table> {
        match k.min(self.steps.len()) {
            0 => &self.initial,
            k => &self.steps[k - 1].table_after,
        }
    }

    pub fn ops_executed(&self) -> usize {
        self.steps.iter().filter(|s| s.status.is_ok()).count()
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().flat_map(|s| s.warnings.iter().map(String::as_str))
    }

    /// Per-step summary: operator key, status and resulting shape.
    pub fn to_json(&self) -> serde_json::Value {
        let steps: Vec<_> = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut v = json!({
                    "index": i,
                    "operation": s.spec.kind().name(),
                    "op": s.spec.canonical_key(),
                    "status": s.status.label(),
                    "rows": s.table_after.num_rows(),
                    "cols": s.table_after.num_columns(),
                });
                if let StepStatus::Failed(e) = &s.status {
                    v["error"] = json!(e.to_string());
                }
                if !s.warnings.is_empty() {
                    v["warnings"] = json!(s.warnings);
                }
                v
            })
            .collect();
        json!({
            "initial": {"rows": self.initial.num_rows(), "cols": self.initial.num_columns()},
            "final": {"rows": self.final_table.num_rows(), "cols": self.final_table.num_columns()},
            "truncated_at": self.truncated_at,
            "steps": steps,
        })
    }
}

/// Applies a single operator.
pub fn apply_op(
    spec: &OperatorSpec,
    t: &Table,
    ex: &dyn SemanticExecutor,
) -> Result<(Table, Vec<String>), ExecError> {
    let plain = |r: Result<Table, ExecError>| r.map(|t| (t, Vec::new()));
    match &spec.op {
        Operator::Select { columns } => plain(ops::exec_select(t, columns)),
        Operator::Filter { column, cmp, value } => plain(ops::exec_filter(t, column, *cmp, value)),
        Operator::SortBy { column, order, k } => plain(ops::exec_sort_by(t, column, *order, *k)),
        Operator::GroupBy { column } => plain(ops::exec_group_by(t, column)),
        Operator::AddColumn {
            new_column,
            description,
        } => exec_add_column(t, new_column, description, ex).map(|o| (o.table, o.warnings)),
        Operator::CleanColumn {
            column,
            description,
        } => exec_clean_column(t, column, description, ex).map(|o| (o.table, o.warnings)),
    }
}

fn run_ops<'a>(
    specs: impl Iterator<Item = &'a OperatorSpec>,
    t: &Table,
    ex: &dyn SemanticExecutor,
) -> ExecutionTrace {
    let initial = Arc::new(t.clone());
    let mut current = Arc::clone(&initial);
    let mut steps = Vec::new();
    let mut truncated_at = None;
    for (i, spec) in specs.enumerate() {
        if truncated_at.is_some() {
            steps.push(TraceStep {
                spec: spec.clone(),
                status: StepStatus::Skipped,
                table_after: Arc::clone(&current),
                warnings: Vec::new(),
            });
            continue;
        }
        match apply_op(spec, &current, ex) {
            Ok((next, warnings)) => {
                current = Arc::new(next);
                steps.push(TraceStep {
                    spec: spec.clone(),
                    status: StepStatus::Ok,
                    table_after: Arc::clone(&current),
                    warnings,
                });
            }
            Err(e) => {
                log::debug!("step {i} ({}) failed: {e}", spec.kind());
                truncated_at = Some(i);
                steps.push(TraceStep {
                    spec: spec.clone(),
                    status: StepStatus::Failed(e),
                    table_after: Arc::clone(&current),
                    warnings: Vec::new(),
                });
            }
        }
    }
    ExecutionTrace {
        initial,
        steps,
        final_table: current,
        truncated_at,
    }
}

pub fn execute(p: &Pipeline, t: &Table, ex: &dyn SemanticExecutor) -> ExecutionTrace {
    run_ops(p.iter(), t, ex)
}

/// Runs only the first `k` operators (clamped to the pipeline length).
pub fn apply_prefix(p: &Pipeline, t: &Table, k: usize, ex: &dyn SemanticExecutor) -> Table {
    let trace = run_ops(p.iter().take(k), t, ex);
    Arc::unwrap_or_clone(trace.final_table)
}
