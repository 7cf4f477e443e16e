//! Self-supervised pipeline rewards.
//!
//! For cell-focused questions (every gold answer appears verbatim as a cell)
//! each operator can be checked by asking whether its output table still
//! contains all answers. Rewards are exact rationals.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::Instance;
use crate::engine::{ExecutionTrace, TraceStep};
use crate::table::{serialize_markdown, Table, Value};

pub type Ratio = BigRational;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("answer set is empty")]
    EmptyAnswers,
    #[error("initial table has no rows or no columns")]
    DegenerateInitialTable,
    #[error("length budget requires 0 < L_cache < L_max (got L_max={l_max}, L_cache={l_cache})")]
    BadBudget { l_max: u64, l_cache: u64 },
    #[error("reward weight {0} is not a finite number")]
    BadWeight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    #[default]
    Exact,
    /// Trim surrounding whitespace and case-fold both sides.
    NormalizedExact,
}

impl Matching {
    pub fn matches(self, answer: &str, cell: &str) -> bool {
        match self {
            Matching::Exact => answer == cell,
            Matching::NormalizedExact => answer.trim().to_lowercase() == cell.trim().to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSet {
    answers: Vec<String>,
    matching: Matching,
}

impl AnswerSet {
    pub fn new(answers: Vec<String>, matching: Matching) -> Result<Self, RewardError> {
        if answers.is_empty() {
            return Err(RewardError::EmptyAnswers);
        }
        Ok(AnswerSet { answers, matching })
    }

    pub fn exact<S: Into<String>>(answers: impl IntoIterator<Item = S>) -> Result<Self, RewardError> {
        Self::new(answers.into_iter().map(Into::into).collect(), Matching::Exact)
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn matching(&self) -> Matching {
        self.matching
    }
}

/// True iff every answer matches the rendering of at least one non-null cell.
pub fn contains_all_answers(t: &Table, a: &AnswerSet) -> bool {
    let cells: Vec<String> = t.cells().filter(|v| !v.is_null()).map(Value::render).collect();
    a.answers
        .iter()
        .all(|ans| cells.iter().any(|c| a.matching.matches(ans, c)))
}

pub fn op_correctness(step: &TraceStep, a: &AnswerSet) -> u8 {
    u8::from(step.status.is_ok() && contains_all_answers(&step.table_after, a))
}

pub fn is_cell_focused(t: &Table, answers: &[String]) -> bool {
    AnswerSet::new(answers.to_vec(), Matching::Exact)
        .map(|a| contains_all_answers(t, &a))
        .unwrap_or(false)
}

fn ratio(num: usize, den: usize) -> Ratio {
    Ratio::new(BigInt::from(num), BigInt::from(den))
}

/// Correct operators among the first `k`, divided by the pipeline length.
/// An empty pipeline scores 0.
pub fn accuracy_reward_prefix(trace: &ExecutionTrace, a: &AnswerSet, k: usize) -> Ratio {
    let n = trace.len();
    if n == 0 {
        return Ratio::zero();
    }
    let correct: usize = trace.steps[..k.min(n)]
        .iter()
        .map(|s| op_correctness(s, a) as usize)
        .sum();
    ratio(correct, n)
}

pub fn accuracy_reward(trace: &ExecutionTrace, a: &AnswerSet) -> Ratio {
    if trace.is_empty() {
        log::warn!("accuracy reward of an empty pipeline is defined as 0");
    }
    accuracy_reward_prefix(trace, a, trace.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionOrientation {
    /// `0.5·|R_k|/|R| + 0.5·|C_k|/|C|`: larger tables score higher.
    #[default]
    AsWritten,
    /// `max(0, 1 − as_written)`.
    Inverted,
}

pub fn compression_reward_prefix(
    trace: &ExecutionTrace,
    k: usize,
    orientation: CompressionOrientation,
) -> Result<Ratio, RewardError> {
    let init = &trace.initial;
    if init.num_rows() == 0 || init.num_columns() == 0 {
        return Err(RewardError::DegenerateInitialTable);
    }
    let t = trace.table_after_prefix(k);
    let half = ratio(1, 2);
    let as_written = &half * ratio(t.num_rows(), init.num_rows())
        + &half * ratio(t.num_columns(), init.num_columns());
    Ok(match orientation {
        CompressionOrientation::AsWritten => as_written,
        CompressionOrientation::Inverted => {
            let inv = Ratio::one() - as_written;
            if inv.is_negative() {
                Ratio::zero()
            } else {
                inv
            }
        }
    })
}

/// Size ratio of the final table relative to the initial one.
pub fn compression_reward(
    trace: &ExecutionTrace,
    orientation: CompressionOrientation,
) -> Result<Ratio, RewardError> {
    compression_reward_prefix(trace, trace.len(), orientation)
}

/// Soft overlong penalty: 0 up to `l_max − l_cache` tokens, then linear down
/// to −1 at `l_max`, and −1 beyond.
pub fn length_reward(token_len: u64, l_max: u64, l_cache: u64) -> Result<Ratio, RewardError> {
    if l_cache == 0 || l_cache >= l_max {
        return Err(RewardError::BadBudget { l_max, l_cache });
    }
    let soft = l_max - l_cache;
    Ok(if token_len <= soft {
        Ratio::zero()
    } else if token_len <= l_max {
        Ratio::new(
            BigInt::from(soft) - BigInt::from(token_len),
            BigInt::from(l_cache),
        )
    } else {
        -Ratio::one()
    })
}

pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// `ceil(utf8_len / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenCounter;

impl TokenCounter for ApproxTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

fn default_lambda() -> f64 {
    0.5
}
fn default_l_max() -> u64 {
    2560
}
fn default_l_cache() -> u64 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the compression term.
    #[serde(default = "default_lambda", alias = "λ1")]
    pub lambda1: f64,
    /// Weight of the length term.
    #[serde(default = "default_lambda", alias = "λ2")]
    pub lambda2: f64,
    #[serde(default = "default_l_max")]
    pub l_max: u64,
    #[serde(default = "default_l_cache")]
    pub l_cache: u64,
    #[serde(default)]
    pub compression_orientation: CompressionOrientation,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda1: default_lambda(),
            lambda2: default_lambda(),
            l_max: default_l_max(),
            l_cache: default_l_cache(),
            compression_orientation: CompressionOrientation::AsWritten,
        }
    }
}

fn weight(w: f64) -> Result<Ratio, RewardError> {
    Ratio::from_float(w).ok_or(RewardError::BadWeight(w))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewardBreakdown {
    pub per_op_correct: Vec<u8>,
    pub r_acc: Ratio,
    pub r_compress: Ratio,
    pub r_length: Ratio,
    pub total: Ratio,
    pub n: usize,
    pub token_len: u64,
    pub warnings: Vec<String>,
}

pub fn ratio_to_f64(r: &Ratio) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

impl RewardBreakdown {
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({
            "per_op_correct": self.per_op_correct,
            "r_acc": ratio_to_f64(&self.r_acc),
            "r_compress": ratio_to_f64(&self.r_compress),
            "r_length": ratio_to_f64(&self.r_length),
            "total": ratio_to_f64(&self.total),
            "n": self.n,
            "token_len": self.token_len,
            "exact": {
                "r_acc": self.r_acc.to_string(),
                "r_compress": self.r_compress.to_string(),
                "r_length": self.r_length.to_string(),
                "total": self.total.to_string(),
            },
        });
        if !self.warnings.is_empty() {
            v["warnings"] = json!(self.warnings);
        }
        v
    }
}

/// `r_acc + λ1·r_compress + λ2·r_length`, evaluated at the full pipeline.
pub fn total_reward(
    trace: &ExecutionTrace,
    a: &AnswerSet,
    token_len: u64,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let mut warnings = Vec::new();
    if trace.is_empty() {
        warnings.push("empty pipeline: accuracy reward defined as 0".to_string());
    }
    let r_acc = accuracy_reward_prefix(trace, a, trace.len());
    let r_compress = compression_reward(trace, cfg.compression_orientation)?;
    let r_length = length_reward(token_len, cfg.l_max, cfg.l_cache)?;
    let total = &r_acc + weight(cfg.lambda1)? * &r_compress + weight(cfg.lambda2)? * &r_length;
    Ok(RewardBreakdown {
        per_op_correct: trace.steps.iter().map(|s| op_correctness(s, a)).collect(),
        r_acc,
        r_compress,
        r_length,
        total,
        n: trace.len(),
        token_len,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NotCellFocused,
    Length,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedInstance {
    pub id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub kept: usize,
    pub dropped_not_cell_focused: usize,
    pub dropped_length: usize,
    pub dropped_unlabeled: usize,
    pub max_tokens: usize,
    pub dropped: Vec<DroppedInstance>,
}

pub const DEFAULT_MAX_TOKENS: usize = 2800;

/// Text whose token count is compared against the length limit.
pub fn instance_prompt_text(inst: &Instance) -> String {
    format!("{}\n{}", inst.question, serialize_markdown(&inst.table, None))
}

/// Keeps instances that are cell-focused and strictly shorter than
/// `max_tokens`. Cell focus is checked first, so an instance failing both is
/// tagged `not_cell_focused`.
pub fn filter_dataset(
    instances: Vec<Instance>,
    counter: &dyn TokenCounter,
    max_tokens: usize,
) -> (Vec<Instance>, FilterStats) {
    let mut stats = FilterStats {
        total: instances.len(),
        max_tokens,
        ..Default::default()
    };
    let mut kept = Vec::new();
    for inst in instances {
        let reason = match &inst.answers {
            None => Some(DropReason::Unlabeled),
            Some(a) if !is_cell_focused(&inst.table, a) => Some(DropReason::NotCellFocused),
            Some(_) if counter.count(&instance_prompt_text(&inst)) >= max_tokens => {
                Some(DropReason::Length)
            }
            Some(_) => None,
        };
        match reason {
            None => kept.push(inst),
            Some(reason) => {
                match reason {
                    DropReason::NotCellFocused => stats.dropped_not_cell_focused += 1,
                    DropReason::Length => stats.dropped_length += 1,
                    DropReason::Unlabeled => stats.dropped_unlabeled += 1,
                }
                stats.dropped.push(DroppedInstance { id: inst.id, reason });
            }
        }
    }
    stats.kept = kept.len();
    (kept, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::execute;
    use crate::ops::{Comparator, OperatorSpec, Pipeline, SortOrder};
    use crate::semantic::{MockExecutor, NoSemanticExecutor};
    use crate::table::load_csv;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Ratio {
        Ratio::new(BigInt::from(n), BigInt::from(d))
    }

    fn countries() -> Table {
        load_csv(b"City,Country,Pop\nParis,France,2.1\nNYC,USA,8.3\nLA,USA,3.9").unwrap()
    }

    #[test]
    fn containment() {
        let t = countries();
        assert!(contains_all_answers(&t, &AnswerSet::exact(["USA"]).unwrap()));
        let t7 = load_csv(b"x\n7.0").unwrap();
        assert!(contains_all_answers(&t7, &AnswerSet::exact(["7"]).unwrap()));
        assert!(!contains_all_answers(&t7, &AnswerSet::exact(["7.0"]).unwrap()));
        assert!(!contains_all_answers(&t, &AnswerSet::exact(["USA", "Spain"]).unwrap()));
        let norm = AnswerSet::new(vec![" usa ".into()], Matching::NormalizedExact).unwrap();
        assert!(contains_all_answers(&t, &norm));
        assert!(!contains_all_answers(&t, &AnswerSet::exact([" usa "]).unwrap()));
        assert_eq!(AnswerSet::exact(Vec::<String>::new()), Err(RewardError::EmptyAnswers));
    }

    #[test]
    fn cell_focus() {
        let t = countries();
        assert!(is_cell_focused(&t, &["Paris".into()]));
        assert!(!is_cell_focused(&t, &["2".into()]));
        assert!(is_cell_focused(&t, &["Paris".into(), "LA".into()]));
    }

    #[test]
    fn correctness_per_step() {
        let a = AnswerSet::exact(["NYC"]).unwrap();
        let p = Pipeline::new(vec![
            OperatorSpec::filter("Country", Comparator::Eq, Value::Text("USA".into())),
            OperatorSpec::filter("Country", Comparator::Eq, Value::Text("France".into())),
            OperatorSpec::filter("ghost", Comparator::Eq, 1i64),
            OperatorSpec::group_by("City"),
        ]);
        let trace = execute(&p, &countries(), &NoSemanticExecutor);
        let cr: Vec<u8> = trace.steps.iter().map(|s| op_correctness(s, &a)).collect();
        assert_eq!(cr, [1, 0, 0, 0]);
    }

    #[test]
    fn failed_step_scores_zero_even_if_answer_present() {
        let a = AnswerSet::exact(["NYC"]).unwrap();
        let p = Pipeline::new(vec![OperatorSpec::filter("ghost", Comparator::Eq, 1i64)]);
        let trace = execute(&p, &countries(), &NoSemanticExecutor);
        assert!(contains_all_answers(&trace.steps[0].table_after, &a));
        assert_eq!(op_correctness(&trace.steps[0], &a), 0);
    }

    #[test]
    fn accuracy_examples() {
        let a = AnswerSet::exact(["NYC"]).unwrap();
        let keep = OperatorSpec::sort_by("Pop", SortOrder::Desc, None);
        let two = execute(&Pipeline::new(vec![keep.clone(), keep.clone()]), &countries(), &NoSemanticExecutor);
        assert_eq!(accuracy_reward(&two, &a), Ratio::one());

        let drop = OperatorSpec::filter("Country", Comparator::Eq, Value::Text("France".into()));
        let four = execute(
            &Pipeline::new(vec![keep.clone(), keep.clone(), drop.clone(), keep.clone()]),
            &countries(),
            &NoSemanticExecutor,
        );
        assert_eq!(accuracy_reward(&four, &a), r(1, 2));
        assert_eq!(accuracy_reward_prefix(&four, &a, 1), r(1, 4));

        let one = execute(&Pipeline::new(vec![drop]), &countries(), &NoSemanticExecutor);
        assert_eq!(accuracy_reward(&one, &a), Ratio::zero());

        let empty = execute(&Pipeline::identity(), &countries(), &NoSemanticExecutor);
        assert_eq!(accuracy_reward(&empty, &a), Ratio::zero());
    }

    fn grid(rows: usize, cols: usize) -> Table {
        let header = (0..cols).map(|c| format!("c{c}")).collect();
        let cells: Vec<Vec<String>> = (0..rows).map(|r| vec![r.to_string(); cols]).collect();
        Table::from_strings(header, &cells).unwrap()
    }

    #[test]
    fn compression_examples() {
        // 10x5 -> 2x2
        let p = Pipeline::new(vec![
            OperatorSpec::select(["c0", "c1"]),
            OperatorSpec::sort_by("c0", SortOrder::Asc, Some(2)),
        ]);
        let trace = execute(&p, &grid(10, 5), &NoSemanticExecutor);
        assert_eq!(compression_reward(&trace, CompressionOrientation::AsWritten).unwrap(), r(3, 10));
        assert_eq!(compression_reward(&trace, CompressionOrientation::Inverted).unwrap(), r(7, 10));

        let id = execute(&Pipeline::identity(), &grid(10, 5), &NoSemanticExecutor);
        assert_eq!(compression_reward(&id, CompressionOrientation::AsWritten).unwrap(), Ratio::one());

        let ex = MockExecutor::new();
        let add = execute(&Pipeline::new(vec![OperatorSpec::add_column("g", "anything")]), &grid(3, 5), &ex);
        let c = compression_reward(&add, CompressionOrientation::AsWritten).unwrap();
        assert_eq!(c, r(11, 10));
        assert_eq!(compression_reward(&add, CompressionOrientation::Inverted).unwrap(), Ratio::zero());

        let degenerate = execute(&Pipeline::identity(), &load_csv(b"a\n").unwrap(), &NoSemanticExecutor);
        assert_eq!(
            compression_reward(&degenerate, CompressionOrientation::AsWritten),
            Err(RewardError::DegenerateInitialTable)
        );
    }

    #[test]
    fn length_examples() {
        assert_eq!(length_reward(2048, 2560, 512).unwrap(), Ratio::zero());
        assert_eq!(length_reward(2304, 2560, 512).unwrap(), r(-1, 2));
        assert_eq!(length_reward(2560, 2560, 512).unwrap(), r(-1, 1));
        assert_eq!(length_reward(3000, 2560, 512).unwrap(), r(-1, 1));
        assert!(matches!(length_reward(1, 512, 512), Err(RewardError::BadBudget { .. })));
        assert!(matches!(length_reward(1, 512, 0), Err(RewardError::BadBudget { .. })));
    }

    #[test]
    fn total_examples() {
        let cfg = RewardConfig::default();
        let a = AnswerSet::exact(["0"]).unwrap();
        // r_acc = 1, r_compress = 0.3, r_length = 0
        let p = Pipeline::new(vec![
            OperatorSpec::select(["c0", "c1"]),
            OperatorSpec::sort_by("c0", SortOrder::Asc, Some(2)),
        ]);
        let trace = execute(&p, &grid(10, 5), &NoSemanticExecutor);
        let b = total_reward(&trace, &a, 100, &cfg).unwrap();
        assert_eq!(b.per_op_correct, [1, 1]);
        assert_eq!(b.total, r(115, 100));

        // answer-preserving no-op pipeline, short output
        let noop = Pipeline::new(vec![OperatorSpec::select(["c0", "c1", "c2", "c3", "c4"])]);
        let trace = execute(&noop, &grid(10, 5), &NoSemanticExecutor);
        assert_eq!(total_reward(&trace, &a, 10, &cfg).unwrap().total, r(3, 2));

        // failing pipeline, overlong output
        let bad = Pipeline::new(vec![OperatorSpec::filter("ghost", Comparator::Eq, 1i64)]);
        let trace = execute(&bad, &grid(10, 5), &NoSemanticExecutor);
        let b = total_reward(&trace, &a, 5000, &cfg).unwrap();
        assert_eq!(b.total, Ratio::zero());
        assert_eq!(b.r_length, r(-1, 1));

        let j = b.to_json();
        assert_eq!(j["exact"]["r_length"], "-1");
        assert_eq!(j["r_compress"], 1.0);
    }

    #[test]
    fn dataset_filter() {
        let inst = |id: &str, answers: Option<Vec<&str>>, rows: usize| Instance {
            id: id.into(),
            question: "q".into(),
            table: grid(rows, 2),
            answers: answers.map(|a| a.into_iter().map(String::from).collect()),
        };
        let (kept, stats) = filter_dataset(
            vec![
                inst("ok", Some(vec!["1"]), 3),
                inst("long", Some(vec!["1"]), 2000),
                inst("count", Some(vec!["42"]), 3),
                inst("unlabeled", None, 3),
            ],
            &ApproxTokenCounter,
            DEFAULT_MAX_TOKENS,
        );
        assert_eq!(kept.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["ok"]);
        assert_eq!(stats.dropped_length, 1);
        assert_eq!(stats.dropped_not_cell_focused, 1);
        assert_eq!(stats.dropped_unlabeled, 1);
        assert_eq!(
            stats.dropped.iter().map(|d| (d.id.as_str(), d.reason)).collect::<Vec<_>>(),
            [("long", DropReason::Length), ("count", DropReason::NotCellFocused), ("unlabeled", DropReason::Unlabeled)]
        );
    }

    #[test]
    fn approx_tokens() {
        assert_eq!(ApproxTokenCounter.count(""), 0);
        assert_eq!(ApproxTokenCounter.count("abcd"), 1);
        assert_eq!(ApproxTokenCounter.count("abcde"), 2);
        assert_eq!(ApproxTokenCounter.count("é"), 1);
    }

    proptest! {
        #[test]
        fn length_reward_is_monotone_and_bounded(a in 0u64..4000, b in 0u64..4000) {
            let (lo, hi) = (a.min(b), a.max(b));
            let rl = length_reward(lo, 2560, 512).unwrap();
            let rh = length_reward(hi, 2560, 512).unwrap();
            prop_assert!(rh <= rl);
            prop_assert!(rl <= Ratio::zero() && rl >= -Ratio::one());
        }

        #[test]
        fn total_is_linear_in_weights(l1 in 0.0f64..2.0, l2 in 0.0f64..2.0, tokens in 0u64..3000) {
            let a = AnswerSet::exact(["0"]).unwrap();
            let p = Pipeline::new(vec![OperatorSpec::sort_by("c0", SortOrder::Asc, Some(3))]);
            let trace = execute(&p, &grid(6, 3), &NoSemanticExecutor);
            let cfg = RewardConfig { lambda1: l1, lambda2: l2, ..Default::default() };
            let b = total_reward(&trace, &a, tokens, &cfg).unwrap();
            let expect = &b.r_acc + Ratio::from_float(l1).unwrap() * &b.r_compress
                + Ratio::from_float(l2).unwrap() * &b.r_length;
            prop_assert_eq!(b.total, expect);
        }

        #[test]
        fn accuracy_partial_sums_nondecreasing(keep in prop::collection::vec(any::<bool>(), 1..6)) {
            let a = AnswerSet::exact(["NYC"]).unwrap();
            let ops = keep.iter().map(|&k| if k {
                OperatorSpec::sort_by("Pop", SortOrder::Asc, None)
            } else {
                OperatorSpec::filter("Country", Comparator::Eq, Value::Text("France".into()))
            }).collect();
            let trace = execute(&Pipeline::new(ops), &countries(), &NoSemanticExecutor);
            let mut prev = Ratio::zero();
            for k in 0..=trace.len() {
                let cur = accuracy_reward_prefix(&trace, &a, k);
                prop_assert!(cur >= prev);
                prop_assert!(cur <= Ratio::one());
                prev = cur;
            }
        }

        #[test]
        fn containment_monotone_under_supersets(extra in prop::collection::vec("[a-z]{1,3}", 0..5)) {
            let base = load_csv(b"x\nNYC").unwrap();
            let a = AnswerSet::exact(["NYC"]).unwrap();
            let mut rows: Vec<Vec<String>> = vec![vec!["NYC".into()]];
            rows.extend(extra.into_iter().map(|e| vec![e]));
            let sup = Table::from_strings(vec!["x".into()], &rows).unwrap();
            prop_assert!(contains_all_answers(&base, &a));
            prop_assert!(contains_all_answers(&sup, &a));
        }
    }
}
