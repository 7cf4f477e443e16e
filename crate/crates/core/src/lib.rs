pub mod config;
pub mod dataset;
pub mod engine;
pub mod gate;
pub mod llm;
pub mod merge;
pub mod ops;
pub mod reward;
pub mod rollback;
pub mod run;
pub mod semantic;
pub mod table;

pub use ops::{
    parse_operator, parse_pipeline, Comparator, ExecError, OpKind, Operator, OperatorSpec,
    ParseError, Pipeline, SortOrder,
};
pub use semantic::{MockExecutor, NoSemanticExecutor, SemanticExecutor};
pub use table::{load_csv, load_json_table, serialize_markdown, Table, TableError, Value};
