//! Regenerates the bundled run fixture: dataset, scripted generator, scripted
//! QA answers keyed by table digest, mock semantic rules and config.
//!
//! cargo run -p tableprep-cli --example make_fixtures -- crates/cli/tests/fixtures/run

use std::path::PathBuf;

use serde_json::json;
use tableprep_core::dataset::{to_jsonl, Instance};
use tableprep_core::engine::execute;
use tableprep_core::llm::{extract_candidates, CandidateOutput};
use tableprep_core::merge::merge_pipelines;
use tableprep_core::rollback::text_digest;
use tableprep_core::{load_csv, serialize_markdown, MockExecutor, Pipeline, SemanticExecutor};

struct Case {
    id: &'static str,
    question: &'static str,
    csv: &'static str,
    answers: &'static [&'static str],
    candidates: &'static [&'static str],
    /// Reply to the fully prepared table.
    on_prepared: &'static str,
    /// Reply to the table after the first operator only.
    on_first: Option<&'static str>,
    /// Reply to the original table.
    on_original: &'static str,
}

const NO_DATA: &str = "No data available";

const CITIES: &str = "city,country,population,area_km2
Tokyo,Japan,37400068,2194
Delhi,India,28514000,1484
Shanghai,China,25582000,6341
Sao Paulo,Brazil,21650000,1521
Mexico City,Mexico,21581000,1485
Cairo,Egypt,20076000,3085
Mumbai,India,19980000,603
Beijing,China,19618000,16411
Osaka,Japan,19281000,225
New York,USA,18819000,783
Los Angeles,USA,12458000,1302";

const MEDALS: &str = "nation,gold,silver,bronze,total
United States,46,29,29,104
China,38,27,23,88
Great Britain,29,17,19,65
Russia,24,26,32,82
South Korea,13,8,7,28
Germany,11,19,14,44
France,11,11,12,34
Italy,8,9,11,28
Hungary,8,4,6,18
Australia,7,16,12,35";

const FILMS: &str = "film,year,director,gross_musd
Titanic,1997,James Cameron,2187
Jurassic Park,1993,Steven Spielberg,1029
The Lion King,1994,Roger Allers,968
Avatar,2009,James Cameron,2923
The Dark Knight,2008,Christopher Nolan,1005
Inception,2010,Christopher Nolan,836
Forrest Gump,1994,Robert Zemeckis,678
Toy Story,1995,John Lasseter,373";

const PRODUCTS: &str = "product,category,price
Desk Lamp,Home,$24.99
Office Chair,Furniture,$189.00
Notebook,Stationery,$3.49
Monitor Arm,Furniture,$79.95
Fountain Pen,Stationery,$45.00
Bookshelf,Furniture,$129.50
Wall Clock,Home,$19.99";

const MATCHES: &str = "date,home,away,winner
2023-08-12,Arsenal,Forest,Arsenal
2023-08-19,Palace,Arsenal,Arsenal
2023-08-26,Arsenal,Fulham,Draw
2023-09-03,Arsenal,Man Utd,Arsenal
2023-09-17,Everton,Arsenal,Arsenal
2023-09-24,Arsenal,Spurs,Draw
2023-09-30,Bournemouth,Arsenal,Arsenal
2023-10-08,Arsenal,Man City,Arsenal
2023-10-21,Chelsea,Arsenal,Draw
2023-11-04,Newcastle,Arsenal,Newcastle";

const RIVERS: &str = "river,continent,length_km,outflow
Nile,Africa,6650,Mediterranean Sea
Amazon,South America,6400,Atlantic Ocean
Yangtze,Asia,6300,East China Sea
Mississippi,North America,6275,Gulf of Mexico
Yenisei,Asia,5539,Kara Sea
Yellow River,Asia,5464,Bohai Sea
Ob,Asia,5410,Gulf of Ob
Congo,Africa,4700,Atlantic Ocean
Amur,Asia,4444,Sea of Okhotsk";

const ELECTIONS: &str = "year,candidate,party,votes_pct
2000,George W. Bush,Republican,47.9
2000,Al Gore,Democratic,48.4
2004,George W. Bush,Republican,50.7
2004,John Kerry,Democratic,48.3
2008,Barack Obama,Democratic,52.9
2008,John McCain,Republican,45.7
2012,Barack Obama,Democratic,51.1
2012,Mitt Romney,Republican,47.2";

const CASES: &[Case] = &[
    Case {
        id: "q01",
        question: "Which city has the largest population?",
        csv: CITIES,
        answers: &["Tokyo"],
        candidates: &[
            r#"[{"operation":"sort_by","column":"population","order":"desc","k":1,"explanation":"largest first"},{"operation":"select","columns":["city","population"]}]"#,
            r#"<think>Need the max population.</think>[{"operation":"select","columns":["city","population"]},{"operation":"sort_by","column":"population","order":"desc","k":1}]"#,
            r#"Plan: [{"operation":"sort_by","column":"population","order":"desc","k":3}]"#,
        ],
        on_prepared: "Tokyo",
        on_first: Some("Tokyo"),
        on_original: "Tokyo",
    },
    Case {
        id: "q02",
        question: "Which Indian city has the smallest area?",
        csv: CITIES,
        answers: &["Mumbai"],
        candidates: &[
            r#"[{"operation":"filter","column":"country","cmp":"==","value":"India"},{"operation":"sort_by","column":"area_km2","order":"asc","k":1}]"#,
            r#"[{"operation":"filter","column":"country","cmp":"==","value":"India"},{"operation":"sort_by","column":"area_km2","order":"asc","k":1}]"#,
            r#"[{"operation":"sort_by","column":"area_km2","order":"asc"}]"#,
        ],
        on_prepared: "Mumbai",
        on_first: Some("Mumbai"),
        on_original: "Osaka",
    },
    Case {
        id: "q03",
        question: "How many people live in Cairo?",
        csv: CITIES,
        answers: &["20076000"],
        candidates: &[
            r#"[{"operation":"filter","column":"city","cmp":"==","value":"Cairo"},{"operation":"select","columns":["city","population"]}]"#,
            r#"[{"operation":"filter","column":"city","cmp":"==","value":"Cairo"}]"#,
            r#"[{"operation":"select","columns":["city","population"]},{"operation":"filter","column":"city","cmp":"==","value":"Cairo"}]"#,
        ],
        on_prepared: "20076000",
        on_first: Some("20076000"),
        on_original: "20,076,000",
    },
    Case {
        id: "q04",
        question: "Which nation won the most silver medals?",
        csv: MEDALS,
        answers: &["United States"],
        candidates: &[
            r#"[{"operation":"select","columns":["nation","silver"]},{"operation":"sort_by","column":"silver","order":"desc","k":1}]"#,
            r#"[{"operation":"sort_by","column":"silver","order":"desc","k":1}]"#,
            r#"[{"operation":"select","columns":["nation","silver"]},{"operation":"sort_by","column":"silver","order":"desc","k":1}]"#,
        ],
        on_prepared: "United States",
        on_first: Some("United States"),
        on_original: "Russia",
    },
    Case {
        id: "q05",
        question: "Which nation had more bronze medals than gold medals and a total above 80?",
        csv: MEDALS,
        answers: &["Russia"],
        candidates: &["!error", "!error", "!error"],
        on_prepared: "Russia",
        on_first: None,
        on_original: "Russia",
    },
    Case {
        id: "q06",
        question: "How many gold medals did Hungary win?",
        csv: MEDALS,
        answers: &["8"],
        candidates: &[
            r#"[{"operation":"filter","column":"nation","cmp":"==","value":"Hungary"},{"operation":"select","columns":["nation","gold"]}]"#,
            r#"[{"operation":"filter","column":"nation","cmp":"==","value":"Hungary"},{"operation":"select","columns":["gold"]}]"#,
            r#"[{"operation":"filter","column":"nation","cmp":"==","value":"Hungary"}]"#,
        ],
        on_prepared: "8",
        on_first: Some("8"),
        on_original: "11",
    },
    Case {
        id: "q07",
        question: "Which director made the highest grossing film?",
        csv: FILMS,
        answers: &["James Cameron"],
        candidates: &[
            "I would sort the films by gross and take the top one.",
            "The answer needs no preparation.",
            "{\"operation\": \"sort_by\"}",
        ],
        on_prepared: "James Cameron",
        on_first: None,
        on_original: "James Cameron",
    },
    Case {
        id: "q08",
        question: "Which film released in 1994 grossed the most?",
        csv: FILMS,
        answers: &["The Lion King"],
        candidates: &[
            r#"[{"operation":"filter","column":"year","cmp":"==","value":1994},{"operation":"sort_by","column":"gross_musd","order":"desc","k":1}]"#,
            r#"[{"operation":"filter","column":"year","cmp":"==","value":"1994"},{"operation":"sort_by","column":"gross_musd","order":"desc","k":1}]"#,
            r#"[{"operation":"filter","column":"year","cmp":"==","value":1994}]"#,
        ],
        on_prepared: "The Lion King",
        on_first: Some("The Lion King"),
        on_original: "Forrest Gump",
    },
    Case {
        id: "q09",
        question: "Which river in Africa empties into the Atlantic Ocean?",
        csv: RIVERS,
        answers: &["Congo"],
        candidates: &[
            r#"[{"operation":"filter","column":"continent","cmp":"==","value":"Africa"},{"operation":"filter","column":"length_km","cmp":">","value":5000}]"#,
            r#"[{"operation":"filter","column":"continent","cmp":"==","value":"Africa"},{"operation":"filter","column":"length_km","cmp":">","value":5000}]"#,
            r#"[{"operation":"filter","column":"outflow","cmp":"==","value":"Atlantic Ocean"}]"#,
        ],
        on_prepared: NO_DATA,
        on_first: Some("Congo"),
        on_original: "Amazon",
    },
    Case {
        id: "q10",
        question: "What is the longest river in Asia?",
        csv: RIVERS,
        answers: &["Yangtze"],
        candidates: &[
            r#"[{"operation":"filter","column":"continent","cmp":"==","value":"Asia"},{"operation":"sort_by","column":"length_km","order":"desc","k":1}]"#,
            r#"[{"operation":"filter","column":"continent","cmp":"==","value":"Asia"},{"operation":"sort_by","column":"length_km","order":"desc","k":1}]"#,
            r#"[{"operation":"sort_by","column":"length_km","order":"desc","k":1}]"#,
        ],
        on_prepared: "Yangtze",
        on_first: Some("Yangtze"),
        on_original: "Nile",
    },
    Case {
        id: "q11",
        question: "Which river flows into the Kara Sea?",
        csv: RIVERS,
        answers: &["Yenisei"],
        candidates: &[
            r#"[{"operation":"filter","column":"outflow","cmp":"==","value":"Kara Sea"},{"operation":"select","columns":["river"]}]"#,
            r#"[{"operation":"filter","column":"outflow","cmp":"==","value":"Kara Sea"}]"#,
            r#"[{"operation":"filter","column":"outflow","cmp":"==","value":"Kara Sea"},{"operation":"select","columns":["river","outflow"]}]"#,
        ],
        on_prepared: "Yenisei",
        on_first: Some("Yenisei"),
        on_original: "Yenisei",
    },
    Case {
        id: "q12",
        question: "Which candidate received the lowest vote share in 2008?",
        csv: ELECTIONS,
        answers: &["John McCain"],
        candidates: &[
            r#"[{"operation":"filter","column":"year","cmp":"==","value":2012},{"operation":"sort_by","column":"votes_pct","order":"asc","k":1}]"#,
            r#"[{"operation":"filter","column":"year","cmp":"==","value":2012},{"operation":"sort_by","column":"votes_pct","order":"asc","k":1}]"#,
            r#"[{"operation":"filter","column":"year","cmp":"==","value":2008}]"#,
        ],
        on_prepared: NO_DATA,
        on_first: Some(NO_DATA),
        on_original: "John McCain",
    },
    Case {
        id: "q13",
        question: "Which party won the popular vote in 2000?",
        csv: ELECTIONS,
        answers: &["Democratic"],
        candidates: &[
            r#"[{"operation":"filter","column":"year","cmp":"==","value":2000},{"operation":"sort_by","column":"votes_pct","order":"desc","k":1}]"#,
            r#"[{"operation":"filter","column":"year","cmp":"==","value":2000,"explanation":"only the 2000 race"},{"operation":"sort_by","column":"votes_pct","order":"desc","k":1,"explanation":"winner on top"}]"#,
            r#"[{"operation":"filter","column":"year","cmp":"==","value":2000}]"#,
        ],
        on_prepared: "Democratic",
        on_first: Some("Democratic"),
        on_original: "Republican",
    },
    Case {
        id: "q14",
        question: "Which film from the 1990s had the lowest gross?",
        csv: FILMS,
        answers: &["Toy Story"],
        candidates: &[
            r#"[{"operation":"add_column","new_column":"decade","description":"decade of the release year"},{"operation":"filter","column":"decade","cmp":"==","value":"1990s"},{"operation":"sort_by","column":"gross_musd","order":"asc","k":1}]"#,
            r#"[{"operation":"add_column","new_column":"decade","description":"decade of the release year"},{"operation":"filter","column":"decade","cmp":"==","value":"1990s"},{"operation":"sort_by","column":"gross_musd","order":"asc","k":1}]"#,
            r#"[{"operation":"sort_by","column":"gross_musd","order":"asc"}]"#,
        ],
        on_prepared: "Toy Story",
        on_first: Some("Toy Story"),
        on_original: "Forrest Gump",
    },
    Case {
        id: "q15",
        question: "What is the most expensive furniture product?",
        csv: PRODUCTS,
        answers: &["Office Chair"],
        candidates: &[
            r#"[{"operation":"clean_column","column":"price","description":"Remove the dollar sign from price"},{"operation":"filter","column":"category","cmp":"==","value":"Furniture"},{"operation":"sort_by","column":"price","order":"desc","k":1}]"#,
            r#"[{"operation":"clean_column","column":"price","description":"Remove the dollar sign from price"},{"operation":"filter","column":"category","cmp":"==","value":"Furniture"},{"operation":"sort_by","column":"price","order":"desc","k":1}]"#,
            r#"[{"operation":"filter","column":"category","cmp":"==","value":"Furniture"}]"#,
        ],
        on_prepared: "Office Chair",
        on_first: Some("Office Chair"),
        on_original: "Bookshelf",
    },
    Case {
        id: "q16",
        question: "Which team won the most of these matches?",
        csv: MATCHES,
        answers: &["Arsenal"],
        candidates: &[
            r#"[{"operation":"group_by","column":"winner"},{"operation":"sort_by","column":"count","order":"desc","k":1}]"#,
            r#"[{"operation":"group_by","column":"winner"},{"operation":"sort_by","column":"count","order":"desc","k":1}]"#,
            r#"[{"operation":"select","columns":["winner"]}]"#,
        ],
        on_prepared: "Arsenal",
        on_first: Some("Arsenal"),
        on_original: "Arsenal",
    },
    Case {
        id: "q17",
        question: "Who did Arsenal play on 2023-10-21?",
        csv: MATCHES,
        answers: &["Chelsea"],
        candidates: &[
            r#"[{"operation":"filter","column":"date","cmp":"==","value":"2023-10-21"},{"operation":"select","columns":["date","home","away"]}]"#,
            r#"[{"operation":"filter","column":"date","cmp":"==","value":"2023-10-21"}]"#,
            r#"[{"operation":"filter","column":"date","cmp":"==","value":"2023-10-21"},{"operation":"select","columns":["home","away"]}]"#,
        ],
        on_prepared: "Arsenal",
        on_first: Some("Chelsea"),
        on_original: "Newcastle",
    },
    Case {
        id: "q18",
        question: "Which Chinese city has the largest area?",
        csv: CITIES,
        answers: &["Beijing"],
        candidates: &[
            r#"[{"operation":"filter","column":"country","cmp":"==","value":"China"},{"operation":"sort_by","column":"area","order":"desc","k":1}]"#,
            r#"[{"operation":"filter","column":"country","cmp":"==","value":"China"},{"operation":"sort_by","column":"area","order":"desc","k":1}]"#,
            r#"[{"operation":"filter","column":"country","cmp":"==","value":"China"},{"operation":"sort_by","column":"area_km2","order":"desc","k":1}]"#,
        ],
        on_prepared: "Beijing",
        on_first: Some("Beijing"),
        on_original: "Shanghai",
    },
    Case {
        id: "q19",
        question: "Which Japanese cities are listed?",
        csv: CITIES,
        answers: &["Tokyo", "Osaka"],
        candidates: &[
            r#"[{"operation":"filter","column":"country","cmp":"==","value":"Japan"},{"operation":"select","columns":["city"]}]"#,
            r#"[{"operation":"filter","column":"country","cmp":"==","value":"Japan"}]"#,
            r#"[{"operation":"filter","column":"country","cmp":"==","value":"Japan"},{"operation":"select","columns":["city"]}]"#,
        ],
        on_prepared: NO_DATA,
        on_first: Some(NO_DATA),
        on_original: "Tokyo | Osaka",
    },
    Case {
        id: "q20",
        question: "Which nation finished with exactly 34 medals in total?",
        csv: MEDALS,
        answers: &["France"],
        candidates: &[
            r#"[{"operation":"filter","column":"total","cmp":"==","value":34}]"#,
            r#"```json
[{"operation":"filter","column":"total","cmp":"==","value":34},{"operation":"select","columns":["nation","total"]}]
```"#,
            r#"[{"operation":"filter","column":"total","cmp":">=","value":34},{"operation":"sort_by","column":"total","order":"asc","k":1}]"#,
        ],
        on_prepared: "France",
        on_first: Some("France"),
        on_original: "Australia",
    },
];

fn mock_rules() -> serde_json::Value {
    json!({
        "decade of the release year": {
            "1993": "1990s", "1994": "1990s", "1995": "1990s", "1997": "1990s",
            "2008": "2000s", "2009": "2000s", "2010": "2010s"
        },
        "Remove the dollar sign": {
            "$24.99": "24.99", "$189.00": "189.00", "$3.49": "3.49", "$79.95": "79.95",
            "$45.00": "45.00", "$129.50": "129.50", "$19.99": "19.99"
        }
    })
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/cli/tests/fixtures/run".into()));
    std::fs::create_dir_all(&dir).expect("create fixture dir");
    let rules = mock_rules();
    let ex = MockExecutor::from_json(&rules).expect("mock rules");

    let mut instances = Vec::new();
    let mut gen_rules = Vec::new();
    let mut answers = Vec::new();
    for c in CASES {
        let table = load_csv(c.csv.as_bytes()).expect("fixture table");
        let outputs: Vec<CandidateOutput> = c
            .candidates
            .iter()
            .enumerate()
            .map(|(index, text)| CandidateOutput {
                index,
                result: if *text == "!error" {
                    Err(tableprep_core::llm::TransportError::Scripted("scripted failure".into()))
                } else {
                    Ok(text.to_string())
                },
            })
            .collect();
        let pipelines = extract_candidates(&outputs).pipelines;
        let merged = merge_pipelines(&pipelines).unwrap_or_else(|_| Pipeline::identity());
        let trace = execute(&merged, &table, &ex as &dyn SemanticExecutor);
        let text = |t: &tableprep_core::Table| serialize_markdown(t, None);

        let mut add = |t: &tableprep_core::Table, response: &str| {
            let digest = text_digest(&text(t));
            if !answers.iter().any(|a: &serde_json::Value| a["question"] == c.question && a["table_digest"] == digest) {
                answers.push(json!({"question": c.question, "table_digest": digest, "response": response}));
            }
        };
        if !merged.is_empty() {
            add(&trace.final_table, c.on_prepared);
            if let Some(r) = c.on_first {
                add(trace.table_after_prefix(1), r);
            }
        }
        add(&table, c.on_original);

        gen_rules.push(json!({"match": format!("Question: {}\n", c.question), "outputs": c.candidates}));
        instances.push(Instance {
            id: c.id.into(),
            question: c.question.into(),
            table,
            answers: Some(c.answers.iter().map(|s| s.to_string()).collect()),
        });
    }

    let write = |name: &str, text: String| std::fs::write(dir.join(name), text).expect("write fixture");
    let pretty = |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("json") + "\n";
    write("dataset.jsonl", to_jsonl(&instances));
    write("generator.json", pretty(&json!({"rules": gen_rules})));
    write("qa.json", pretty(&json!({"answers": answers, "default": NO_DATA})));
    write("mock_rules.json", pretty(&rules));
    write(
        "config.json",
        pretty(&json!({
            "generator": {"kind": "scripted", "script": "generator.json", "retry_backoff_ms": 0},
            "qa": {"kind": "scripted", "script": "qa.json"},
            "semantic_executor": {"kind": "mock", "rules_file": "mock_rules.json"},
            "run": {"N": 3, "seed": 7, "parallelism": 4}
        })),
    );
}
