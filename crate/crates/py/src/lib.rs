//! Python bindings. Structured values cross the boundary as JSON and come
//! back as plain Python objects.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tableprep_core::dataset::{parse_jsonl, to_jsonl};
use tableprep_core::engine::execute;
use tableprep_core::gate::{self, GateConfig, Verdict};
use tableprep_core::merge::merge_pipelines;
use tableprep_core::reward::{self, ratio_to_f64, AnswerSet, ApproxTokenCounter, Matching, RewardConfig};
use tableprep_core::{load_csv, load_json_table, parse_pipeline, serialize_markdown, NoSemanticExecutor};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_json(text: &str) -> PyResult<serde_json::Value> {
    serde_json::from_str(text).map_err(value_error)
}

fn to_py<'py>(py: Python<'py>, doc: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (doc.to_string(),))
}

#[pyclass(name = "Table", module = "tableprep", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyTable(pub tableprep_core::Table);

#[pymethods]
impl PyTable {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        load_csv(text.as_bytes()).map(PyTable).map_err(value_error)
    }

    /// From `{"header": [...], "rows": [[...], ...]}` text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        load_json_table(&parse_json(text)?).map(PyTable).map_err(value_error)
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.0.columns().to_vec()
    }

    /// Rendered cells; nulls are empty strings.
    #[getter]
    fn rows(&self) -> Vec<Vec<String>> {
        self.0.rows().iter().map(|r| r.iter().map(|v| v.render()).collect()).collect()
    }

    #[getter]
    fn num_rows(&self) -> usize {
        self.0.num_rows()
    }

    #[getter]
    fn num_columns(&self) -> usize {
        self.0.num_columns()
    }

    #[pyo3(signature = (max_rows=None))]
    fn to_markdown(&self, max_rows: Option<usize>) -> String {
        serialize_markdown(&self.0, max_rows)
    }

    fn to_json(&self) -> String {
        self.0.to_json().to_string()
    }

    fn digest(&self) -> String {
        self.0.digest()
    }

    fn __len__(&self) -> usize {
        self.0.num_rows()
    }

    fn __repr__(&self) -> String {
        format!("Table({} rows x {} columns)", self.0.num_rows(), self.0.num_columns())
    }
}

#[pyclass(name = "Pipeline", module = "tableprep", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyPipeline(pub tableprep_core::Pipeline);

#[pymethods]
impl PyPipeline {
    /// From a JSON array of operator objects.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        parse_pipeline(&parse_json(text)?).map(PyPipeline).map_err(value_error)
    }

    fn to_json(&self) -> String {
        self.0.to_json().to_string()
    }

    /// Canonical operator keys, explanations excluded.
    fn keys(&self) -> Vec<String> {
        self.0.iter().map(|s| s.canonical_key()).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Pipeline({})", self.0.to_json())
    }
}

#[pymodule]
mod tableprep {
    use super::*;

    #[pymodule_export]
    use super::{PyPipeline, PyTable};

    /// Runs the structured operators of a pipeline; semantic operators fail
    /// and truncate the trace.
    #[pyfunction]
    fn execute_pipeline(table: &PyTable, pipeline: &PyPipeline) -> PyTable {
        let trace = execute(&pipeline.0, &table.0, &NoSemanticExecutor);
        PyTable((*trace.final_table).clone())
    }

    #[pyfunction]
    fn execute_trace<'py>(py: Python<'py>, table: &PyTable, pipeline: &PyPipeline) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &execute(&pipeline.0, &table.0, &NoSemanticExecutor).to_json())
    }

    #[pyfunction]
    fn merge(candidates: Vec<PyPipeline>) -> PyResult<PyPipeline> {
        let ps: Vec<_> = candidates.into_iter().map(|p| p.0).collect();
        merge_pipelines(&ps).map(PyPipeline).map_err(value_error)
    }

    #[pyfunction]
    #[pyo3(signature = (token_len, l_max=2560, l_cache=512))]
    fn length_reward(token_len: u64, l_max: u64, l_cache: u64) -> PyResult<f64> {
        reward::length_reward(token_len, l_max, l_cache)
            .map(|r| ratio_to_f64(&r))
            .map_err(value_error)
    }

    /// Reward breakdown for a pipeline run on `table` against gold `answers`.
    #[pyfunction]
    #[pyo3(signature = (table, pipeline, answers, token_len, lambda1=0.5, lambda2=0.5, normalized=false))]
    #[allow(clippy::too_many_arguments)]
    fn total_reward<'py>(
        py: Python<'py>,
        table: &PyTable,
        pipeline: &PyPipeline,
        answers: Vec<String>,
        token_len: u64,
        lambda1: f64,
        lambda2: f64,
        normalized: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let matching = if normalized { Matching::NormalizedExact } else { Matching::Exact };
        let a = AnswerSet::new(answers, matching).map_err(value_error)?;
        let cfg = RewardConfig { lambda1, lambda2, ..RewardConfig::default() };
        let trace = execute(&pipeline.0, &table.0, &NoSemanticExecutor);
        let b = reward::total_reward(&trace, &a, token_len, &cfg).map_err(value_error)?;
        to_py(py, &b.to_json())
    }

    #[pyfunction]
    #[pyo3(signature = (rewards, eps=1e-6))]
    fn advantages(rewards: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
        gate::advantages_f64(&rewards, eps).map_err(value_error)
    }

    /// `(accepted, reason)`, reason being `None`, "low_variance" or "low_quality".
    #[pyfunction]
    #[pyo3(signature = (rewards, variance_threshold=0.1, quality_threshold=0.5))]
    fn vgr_accept(rewards: Vec<f64>, variance_threshold: f64, quality_threshold: f64) -> PyResult<(bool, Option<String>)> {
        let cfg = GateConfig { variance_threshold, quality_threshold, ..GateConfig::default() };
        cfg.validate().map_err(value_error)?;
        let rs = rewards
            .iter()
            .map(|&r| gate::ratio_from_f64(r))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_error)?;
        Ok(match gate::vgr_accept(&rs, &cfg).map_err(value_error)? {
            Verdict::Accepted => (true, None),
            Verdict::Rejected(r) => {
                let reason = serde_json::to_value(r).map_err(value_error)?;
                (false, reason.as_str().map(String::from))
            }
        })
    }

    /// Filters JSONL instances; returns the kept JSONL and the statistics.
    #[pyfunction]
    #[pyo3(signature = (jsonl, max_tokens=2800))]
    fn filter_dataset<'py>(py: Python<'py>, jsonl: &str, max_tokens: usize) -> PyResult<(String, Bound<'py, PyAny>)> {
        let (instances, errors) = parse_jsonl(jsonl);
        if let Some(e) = errors.first() {
            return Err(PyValueError::new_err(format!("line {}: {}", e.line, e.message)));
        }
        let (kept, stats) = reward::filter_dataset(instances, &ApproxTokenCounter, max_tokens);
        let stats = serde_json::to_value(&stats).map_err(value_error)?;
        Ok((to_jsonl(&kept), to_py(py, &stats)?))
    }
}
