//! End-to-end batch runs: generate, merge, execute, answer with rollback,
//! and score, one instance at a time across a worker pool.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, ConfigError};
use crate::dataset::{Instance, LineError};
use crate::engine::execute;
use crate::llm::{extract_candidates, generate_candidates, open_log, ChatTransport, RequestLimiter};
use crate::merge::merge_pipelines;
use crate::ops::Pipeline;
use crate::reward::{ratio_to_f64, total_reward, ApproxTokenCounter, Matching, Ratio, TokenCounter};
use crate::rollback::{answer_with_rollback, QaClient};
use crate::semantic::SemanticExecutor;

pub const COMPRESSION_DEFINITION: &str =
    "mean over instances of 1 - cells_after/cells_before, where cells_after counts the cells of the table the answer came from";

/// Clients and settings shared by every instance of a run.
pub struct Runtime {
    pub cfg: Config,
    pub generator: Arc<dyn ChatTransport>,
    pub qa: Arc<dyn QaClient>,
    pub executor: Arc<dyn SemanticExecutor>,
    limiter: Arc<RequestLimiter>,
}

impl Runtime {
    pub fn from_config(cfg: Config, log_llm: Option<&Path>) -> Result<Runtime, ConfigError> {
        let log = log_llm
            .map(open_log)
            .transpose()
            .map_err(|e| ConfigError(format!("cannot open LLM log: {e}")))?;
        Ok(Runtime {
            generator: cfg.build_generator(&log)?,
            qa: cfg.build_qa(&log)?,
            executor: cfg.build_executor(&log)?,
            limiter: RequestLimiter::new(cfg.run.max_concurrent_requests),
            cfg,
        })
    }

    pub fn new(
        cfg: Config,
        generator: Arc<dyn ChatTransport>,
        qa: Arc<dyn QaClient>,
        executor: Arc<dyn SemanticExecutor>,
    ) -> Runtime {
        Runtime {
            limiter: RequestLimiter::new(cfg.run.max_concurrent_requests),
            cfg,
            generator,
            qa,
            executor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordReward {
    pub r_acc: f64,
    pub r_compress: f64,
    pub r_length: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    pub state_used: Option<u8>,
    pub qa_calls: usize,
    pub ops_executed: usize,
    pub cells_before: usize,
    pub cells_after: Option<usize>,
    pub pipeline: serde_json::Value,
    pub candidates_parsed: usize,
    pub dropped_candidates: Vec<DroppedCandidate>,
    /// No candidate survived, so the identity pipeline was used.
    pub fallback_identity: bool,
    pub short_circuited: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RecordReward>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub instances: usize,
    pub answered: usize,
    pub labeled: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub mean_compression: f64,
    pub rollback_rate: f64,
    pub op_type_histogram: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportError {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub compression_definition: String,
    pub no_prep: bool,
    pub seed: u64,
    pub n: usize,
    pub aggregates: Aggregates,
    pub records: Vec<InstanceRecord>,
    pub errors: Vec<ReportError>,
}

fn frac(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        ratio_to_f64(&Ratio::new(BigInt::from(num), BigInt::from(den)))
    }
}

fn op_names(pipeline: &serde_json::Value) -> impl Iterator<Item = String> + '_ {
    pipeline
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|op| op.get("operation").and_then(|o| o.as_str()).map(String::from))
}

pub fn compute_aggregates(records: &[InstanceRecord]) -> Aggregates {
    let answered: Vec<&InstanceRecord> = records.iter().filter(|r| r.state_used.is_some()).collect();
    let labeled: Vec<&InstanceRecord> = records.iter().filter(|r| r.correct.is_some()).collect();
    let correct = labeled.iter().filter(|r| r.correct == Some(true)).count();

    let mut compression = Ratio::zero();
    let mut counted = 0usize;
    for r in records {
        if let (Some(after), before) = (r.cells_after, r.cells_before) {
            if before > 0 {
                compression += Ratio::one() - Ratio::new(BigInt::from(after), BigInt::from(before));
                counted += 1;
            }
        }
    }
    let mean_compression = if counted == 0 {
        0.0
    } else {
        ratio_to_f64(&(compression / Ratio::from_integer(BigInt::from(counted))))
    };

    let mut op_type_histogram = BTreeMap::new();
    for r in records {
        for name in op_names(&r.pipeline) {
            *op_type_histogram.entry(name).or_insert(0) += 1;
        }
    }

    Aggregates {
        instances: records.len(),
        answered: answered.len(),
        labeled: labeled.len(),
        accuracy: (!labeled.is_empty()).then(|| frac(correct, labeled.len())),
        mean_compression,
        rollback_rate: frac(
            answered.iter().filter(|r| r.state_used > Some(1) && !r.short_circuited).count(),
            answered.len(),
        ),
        op_type_histogram,
    }
}

impl RunReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Parses a report and checks its aggregates against its records.
    pub fn load(text: &str) -> Result<RunReport, String> {
        let report: RunReport = serde_json::from_str(text).map_err(|e| e.to_string())?;
        report.verify()?;
        Ok(report)
    }

    pub fn verify(&self) -> Result<(), String> {
        let recomputed = compute_aggregates(&self.records);
        if recomputed != self.aggregates {
            return Err(format!(
                "aggregates do not match records: stored {:?}, recomputed {:?}",
                self.aggregates, recomputed
            ));
        }
        Ok(())
    }
}

/// A single gold answer must match the whole prediction. Several gold
/// answers are compared as a multiset against the prediction split on `|`
/// or `,`.
pub fn answer_correct(prediction: &str, gold: &[String], matching: Matching) -> bool {
    match gold {
        [] => false,
        [one] => matching.matches(one, prediction.trim()),
        many => {
            let mut parts: Vec<&str> = prediction
                .split(['|', ','])
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .collect();
            if parts.len() != many.len() {
                return false;
            }
            many.iter().all(|g| match parts.iter().position(|p| matching.matches(g, p)) {
                Some(i) => {
                    parts.swap_remove(i);
                    true
                }
                None => false,
            })
        }
    }
}

struct Prepared {
    pipeline: Pipeline,
    parsed: usize,
    dropped: Vec<DroppedCandidate>,
    fallback: bool,
    error: Option<String>,
}

fn prepare(rt: &Runtime, inst: &Instance) -> Prepared {
    let identity = |dropped, error| Prepared {
        pipeline: Pipeline::identity(),
        parsed: 0,
        dropped,
        fallback: true,
        error,
    };
    let outputs = match generate_candidates(
        &inst.question,
        &inst.table,
        &rt.cfg.generation(),
        rt.generator.as_ref(),
        Some(&rt.limiter),
    ) {
        Ok(o) => o,
        Err(e) => return identity(Vec::new(), Some(e.to_string())),
    };
    let extracted = extract_candidates(&outputs);
    let dropped = extracted
        .dropped
        .into_iter()
        .map(|(index, reason)| DroppedCandidate { index, reason })
        .collect();
    match merge_pipelines(&extracted.pipelines) {
        Ok(pipeline) => Prepared {
            pipeline,
            parsed: extracted.pipelines.len(),
            dropped,
            fallback: false,
            error: None,
        },
        Err(_) => identity(dropped, None),
    }
}

/// Runs one instance. Client failures end up in the record and the returned
/// error list; they never abort the batch.
pub fn run_instance(rt: &Runtime, inst: &Instance) -> (InstanceRecord, Vec<ReportError>) {
    let mut errors = Vec::new();
    let prepared = if rt.cfg.run.no_prep {
        Prepared {
            pipeline: Pipeline::identity(),
            parsed: 0,
            dropped: Vec::new(),
            fallback: false,
            error: None,
        }
    } else {
        prepare(rt, inst)
    };
    if let Some(message) = &prepared.error {
        errors.push(ReportError {
            line: None,
            id: Some(inst.id.clone()),
            stage: "generate".into(),
            message: message.clone(),
        });
    }

    let answers = inst.answer_set(rt.cfg.eval.matching);
    let reward = answers.as_ref().and_then(|a| {
        let trace = execute(&prepared.pipeline, &inst.table, rt.executor.as_ref());
        let tokens = ApproxTokenCounter.count(&prepared.pipeline.to_json().to_string()) as u64;
        let b = total_reward(&trace, a, tokens, &rt.cfg.reward).ok()?;
        Some(RecordReward {
            r_acc: ratio_to_f64(&b.r_acc),
            r_compress: ratio_to_f64(&b.r_compress),
            r_length: ratio_to_f64(&b.r_length),
            total: ratio_to_f64(&b.total),
        })
    });

    let mut record = InstanceRecord {
        id: inst.id.clone(),
        final_answer: None,
        correct: None,
        state_used: None,
        qa_calls: 0,
        ops_executed: 0,
        cells_before: inst.table.cell_count(),
        cells_after: None,
        pipeline: prepared.pipeline.to_json(),
        candidates_parsed: prepared.parsed,
        dropped_candidates: prepared.dropped,
        fallback_identity: prepared.fallback,
        short_circuited: false,
        reward,
        error: None,
    };

    match answer_with_rollback(
        &inst.question,
        &inst.table,
        &prepared.pipeline,
        rt.qa.as_ref(),
        rt.executor.as_ref(),
        &rt.cfg.rollback,
    ) {
        Ok(r) => {
            record.correct = inst
                .answers
                .as_ref()
                .map(|gold| answer_correct(&r.answer, gold, rt.cfg.eval.matching));
            record.final_answer = Some(r.answer);
            record.state_used = Some(r.state_used);
            record.qa_calls = r.qa_calls;
            record.ops_executed = r.ops_executed;
            record.cells_after = Some(r.cells_after);
            record.short_circuited = r.short_circuited;
        }
        Err(e) => {
            record.correct = inst.answers.as_ref().map(|_| false);
            record.qa_calls = e.state as usize;
            record.error = Some(e.to_string());
            errors.push(ReportError {
                line: None,
                id: Some(inst.id.clone()),
                stage: "qa".into(),
                message: e.to_string(),
            });
        }
    }
    (record, errors)
}

/// Runs every instance on a pool of `run.parallelism` workers. Records and
/// errors are sorted so the report does not depend on scheduling.
pub fn run_dataset(rt: &Runtime, instances: &[Instance], line_errors: &[LineError]) -> RunReport {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(rt.cfg.run.parallelism)
        .build()
        .expect("thread pool");
    let results: Vec<(InstanceRecord, Vec<ReportError>)> =
        pool.install(|| instances.par_iter().map(|inst| run_instance(rt, inst)).collect());

    let mut records = Vec::with_capacity(results.len());
    let mut errors: Vec<ReportError> = line_errors
        .iter()
        .map(|e| ReportError {
            line: Some(e.line),
            id: None,
            stage: "dataset".into(),
            message: e.message.clone(),
        })
        .collect();
    let mut instance_errors = Vec::new();
    for (record, errs) in results {
        records.push(record);
        instance_errors.extend(errs);
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    instance_errors.sort_by(|a, b| (&a.id, &a.stage).cmp(&(&b.id, &b.stage)));
    errors.extend(instance_errors);

    RunReport {
        compression_definition: COMPRESSION_DEFINITION.into(),
        no_prep: rt.cfg.run.no_prep,
        seed: rt.cfg.run.seed,
        n: rt.cfg.generation().n,
        aggregates: compute_aggregates(&records),
        records,
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedTransport;
    use crate::rollback::{ScriptedQa, NO_DATA};
    use crate::semantic::NoSemanticExecutor;
    use crate::table::load_csv;

    fn inst(id: &str, answers: Option<Vec<&str>>) -> Instance {
        Instance {
            id: id.into(),
            question: format!("which city {id}?"),
            table: load_csv(b"city,country\nParis,France\nNYC,USA").unwrap(),
            answers: answers.map(|a| a.into_iter().map(String::from).collect()),
        }
    }

    fn runtime(generator: ScriptedTransport, qa: ScriptedQa, no_prep: bool) -> Runtime {
        let mut cfg = Config::default();
        cfg.run.no_prep = no_prep;
        cfg.run.n = Some(3);
        cfg.generator.params.retry_backoff_ms = 0;
        Runtime::new(cfg, Arc::new(generator), Arc::new(qa), Arc::new(NoSemanticExecutor))
    }

    #[test]
    fn correctness_rule() {
        let g = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(answer_correct(" NYC ", &g(&["NYC"]), Matching::Exact));
        assert!(!answer_correct("nyc", &g(&["NYC"]), Matching::Exact));
        assert!(answer_correct("nyc", &g(&["NYC"]), Matching::NormalizedExact));
        assert!(answer_correct("LA | NYC", &g(&["NYC", "LA"]), Matching::Exact));
        assert!(!answer_correct("NYC, NYC", &g(&["NYC", "LA"]), Matching::Exact));
        assert!(answer_correct("3,000", &g(&["3,000"]), Matching::Exact));
    }

    #[test]
    fn end_to_end_with_scripts() {
        let filter = r#"[{"operation":"filter","column":"country","cmp":"==","value":"USA"}]"#;
        let generator = ScriptedTransport::new()
            .rule("which city a?", [filter, filter, "no plan"])
            .rule("which city b?", ["!error"]);
        let qa = ScriptedQa::new()
            .answer_for("which city a?", None, "NYC")
            .answer_for("which city b?", None, "Paris");
        let rt = runtime(generator, qa, false);
        let report = run_dataset(&rt, &[inst("b", Some(vec!["Paris"])), inst("a", Some(vec!["NYC"]))], &[]);
        let ids: Vec<&str> = report.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);

        let a = &report.records[0];
        assert_eq!(a.final_answer.as_deref(), Some("NYC"));
        assert_eq!(a.correct, Some(true));
        assert_eq!(a.candidates_parsed, 2);
        assert_eq!(a.dropped_candidates.len(), 1);
        assert_eq!((a.cells_before, a.cells_after), (4, Some(2)));

        let b = &report.records[1];
        assert!(b.fallback_identity);
        assert_eq!(b.state_used, Some(3));
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].stage, "generate");

        assert_eq!(report.aggregates.accuracy, Some(1.0));
        assert_eq!(report.aggregates.mean_compression, 0.25);
        assert_eq!(report.aggregates.op_type_histogram.get("filter"), Some(&1));
        RunReport::load(&report.to_json_pretty()).unwrap();
    }

    #[test]
    fn no_prep_has_zero_compression() {
        let qa = ScriptedQa::new();
        let rt = runtime(ScriptedTransport::new(), qa, true);
        let report = run_dataset(&rt, &[inst("a", None), inst("b", None)], &[]);
        assert_eq!(report.aggregates.mean_compression, 0.0);
        assert_eq!(report.aggregates.rollback_rate, 0.0);
        assert_eq!(report.aggregates.accuracy, None);
        assert!(report.records.iter().all(|r| r.final_answer.as_deref() == Some(NO_DATA)));
        assert!(!report.to_json_pretty().contains("\"correct\""));
    }

    #[test]
    fn tampered_report_fails_verification() {
        let rt = runtime(ScriptedTransport::new(), ScriptedQa::new(), true);
        let mut report = run_dataset(&rt, &[inst("a", Some(vec!["x"]))], &[]);
        report.aggregates.accuracy = Some(1.0);
        assert!(RunReport::load(&report.to_json_pretty()).is_err());
    }
}
