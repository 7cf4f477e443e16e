use serde_json::json;

use tableprep_core::engine::execute;
use tableprep_core::merge::merge_pipelines;
use tableprep_core::reward::{total_reward, AnswerSet, RewardConfig};
use tableprep_core::rollback::{answer_with_rollback, text_digest, RollbackConfig, ScriptedQa};
use tableprep_core::{load_csv, parse_pipeline, serialize_markdown, MockExecutor, Table};

const MEDALS: &[u8] = b"nation,gold,silver,bronze\n\
Norway,16,8,13\n\
Germany,12,10,5\n\
Canada,11,8,10\n\
United States,9,8,8\n\
Netherlands,8,5,4\n";

fn medals() -> Table {
    load_csv(MEDALS).unwrap()
}

#[test]
fn candidates_merge_execute_and_score() {
    let candidates: Vec<_> = [
        json!([
            {"operation": "select", "columns": ["nation", "gold"]},
            {"operation": "sort_by", "column": "gold", "order": "desc", "k": 2, "explanation": "top two"}
        ]),
        json!([
            {"operation": "sort_by", "column": "gold", "order": "desc", "k": 2},
            {"operation": "select", "columns": ["nation", "silver"]}
        ]),
        json!([{"operation": "filter", "column": "gold", "cmp": ">=", "value": "12"}]),
    ]
    .iter()
    .map(|doc| parse_pipeline(doc).unwrap())
    .collect();
    let merged = merge_pipelines(&candidates).unwrap();
    assert_eq!(
        merged.to_json(),
        json!([
            {"operation": "select", "columns": ["nation", "gold", "silver"]},
            {"operation": "sort_by", "column": "gold", "order": "desc", "k": 2, "explanation": "top two"}
        ])
    );

    let t = medals();
    let trace = execute(&merged, &t, &MockExecutor::new());
    let out = &trace.final_table;
    assert_eq!(out.columns(), ["nation", "gold", "silver"]);
    assert_eq!(out.rows()[0][0].render(), "Norway");

    let answers = AnswerSet::exact(["Norway"]).unwrap();
    let b = total_reward(&trace, &answers, 100, &RewardConfig::default()).unwrap();
    assert_eq!(b.per_op_correct, [1, 1]);
    // 1 + 1/2 * (1/2 * 2/5 + 1/2 * 3/4) + 0
    assert_eq!(b.total.to_string(), "103/80");
}

#[test]
fn rollback_reaches_original_table_when_prepared_tables_lack_the_answer() {
    let t = medals();
    let p = parse_pipeline(&json!([
        {"operation": "filter", "column": "gold", "cmp": ">", "value": 10},
        {"operation": "select", "columns": ["nation"]}
    ]))
    .unwrap();
    let question = "Which nation won 8 bronze medals?";
    let original = text_digest(&serialize_markdown(&t, None));
    let qa = ScriptedQa::new().answer_for(question, Some(original), "United States");
    let r = answer_with_rollback(question, &t, &p, &qa, &MockExecutor::new(), &RollbackConfig::default()).unwrap();
    assert_eq!((r.answer.as_str(), r.state_used, r.qa_calls), ("United States", 3, 3));
    assert_eq!(qa.calls(), 3);
    let shapes: Vec<(usize, usize)> = r.tables_tried.iter().map(|s| (s.rows, s.cols)).collect();
    assert_eq!(shapes, [(3, 1), (3, 4), (5, 4)]);
}

#[test]
fn semantic_operators_use_the_executor() {
    let t = medals();
    let p = parse_pipeline(&json!([
        {"operation": "add_column", "new_column": "continent", "description": "continent of the nation"},
        {"operation": "filter", "column": "continent", "cmp": "==", "value": "North America"}
    ]))
    .unwrap();
    let ex = MockExecutor::new().mapping(
        "continent of",
        [
            ("Norway", "Europe"),
            ("Germany", "Europe"),
            ("Canada", "North America"),
            ("United States", "North America"),
            ("Netherlands", "Europe"),
        ],
    );
    let trace = execute(&p, &t, &ex);
    let nations: Vec<String> = trace.final_table.rows().iter().map(|r| r[0].render()).collect();
    assert_eq!(nations, ["Canada", "United States"]);
    assert!(ex.calls() >= 1);
}
