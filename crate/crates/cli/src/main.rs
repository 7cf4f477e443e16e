use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value as Json};

use tableprep_core::config::{Config, ConfigError};
use tableprep_core::dataset::{parse_jsonl, to_jsonl};
use tableprep_core::engine::execute;
use tableprep_core::gate::{advantages, group_stats, ratio_from_f64, vgr_accept, Verdict};
use tableprep_core::merge::merge_pipelines;
use tableprep_core::reward::{
    filter_dataset, ratio_to_f64, total_reward, AnswerSet, ApproxTokenCounter, Matching,
    TokenCounter, DEFAULT_MAX_TOKENS,
};
use tableprep_core::run::{run_dataset, Runtime};
use tableprep_core::{load_csv, load_json_table, parse_pipeline, Pipeline, Table};

#[derive(Parser)]
#[command(name = "tableprep", version, about = "Question-driven table preparation pipelines")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Append every model request and response to this JSONL file.
    #[arg(long, global = true)]
    log_llm: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Prepare, answer and score every instance of a JSONL dataset.
    Run {
        dataset: PathBuf,
        /// Answer from the original tables (identity pipeline).
        #[arg(long)]
        no_prep: bool,
    },
    /// Execute a pipeline on a table (CSV, or JSON with header and rows).
    Exec {
        table: PathBuf,
        pipeline: PathBuf,
        /// Also print the per-step trace.
        #[arg(long)]
        trace: bool,
    },
    /// Merge a JSON array of candidate pipelines.
    Merge { candidates: PathBuf },
    /// Score a pipeline: bundle with table, pipeline, answers and token_len or output_text.
    Reward { bundle: PathBuf },
    /// Group statistics, advantages and gate verdicts for reward groups.
    Gate { rewards: PathBuf },
    /// Keep cell-focused instances under the token limit.
    FilterDataset {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
        max_tokens: usize,
        /// Where to write filter statistics; stderr when omitted.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Dataset(String),
    Other(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Dataset(format!("{}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Json, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::Dataset(format!("{}: {e}", path.display())))
}

fn load_table(path: &Path) -> Result<Table, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Dataset(format!("{}: {e}", path.display())))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let at = |e: &dyn std::fmt::Display| Failure::Dataset(format!("{}: {e}", path.display()));
    if is_csv {
        return load_csv(&bytes).map_err(|e| at(&e));
    }
    let doc: Json = serde_json::from_slice(&bytes).map_err(|e| at(&e))?;
    load_json_table(&doc).map_err(|e| at(&e))
}

fn pipeline_from(doc: &Json, what: &str) -> Result<Pipeline, Failure> {
    parse_pipeline(doc).map_err(|e| Failure::Dataset(format!("{what}: {e}")))
}

struct Ctx {
    out: Option<PathBuf>,
}

impl Ctx {
    fn emit(&self, text: &str) -> CmdResult {
        match &self.out {
            Some(p) => fs::write(p, text).map_err(|e| Failure::Other(format!("{}: {e}", p.display()))),
            None => std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Other(e.to_string())),
        }
    }

    fn emit_json(&self, v: &Json) -> CmdResult {
        self.emit(&(serde_json::to_string_pretty(v).expect("json serializes") + "\n"))
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn cmd_run(cli: &Cli, ctx: &Ctx, dataset: &Path, no_prep: bool) -> CmdResult {
    let mut cfg = load_config(cli)?;
    cfg.run.no_prep |= no_prep;
    let rt = Runtime::from_config(cfg, cli.log_llm.as_deref())?;
    let (instances, line_errors) = parse_jsonl(&read(dataset)?);
    if instances.is_empty() && !line_errors.is_empty() {
        return Err(Failure::Dataset(format!(
            "{}: no valid instances ({} bad lines)",
            dataset.display(),
            line_errors.len()
        )));
    }
    for e in &line_errors {
        log::warn!("{}:{}: {}", dataset.display(), e.line, e.message);
    }
    let report = run_dataset(&rt, &instances, &line_errors);
    ctx.emit(&report.to_json_pretty())
}

fn cmd_exec(cli: &Cli, ctx: &Ctx, table: &Path, pipeline: &Path, trace: bool) -> CmdResult {
    let cfg = load_config(cli)?;
    let ex = cfg.build_executor(&None)?;
    let t = load_table(table)?;
    let p = pipeline_from(&read_json(pipeline)?, &pipeline.display().to_string())?;
    let tr = execute(&p, &t, ex.as_ref());
    let table_json = tr.final_table.to_json();
    if trace {
        ctx.emit_json(&json!({"table": table_json, "trace": tr.to_json()}))
    } else {
        ctx.emit_json(&table_json)
    }
}

fn cmd_merge(ctx: &Ctx, candidates: &Path) -> CmdResult {
    let doc = read_json(candidates)?;
    let arr = doc
        .as_array()
        .ok_or_else(|| Failure::Dataset("candidates must be a JSON array of pipelines".into()))?;
    let pipelines = arr
        .iter()
        .enumerate()
        .map(|(i, p)| pipeline_from(p, &format!("candidate {i}")))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = merge_pipelines(&pipelines).map_err(|e| Failure::Dataset(e.to_string()))?;
    ctx.emit_json(&merged.to_json())
}

fn cmd_reward(cli: &Cli, ctx: &Ctx, bundle: &Path) -> CmdResult {
    let cfg = load_config(cli)?;
    let ex = cfg.build_executor(&None)?;
    let doc = read_json(bundle)?;
    let field = |k: &str| doc.get(k).ok_or_else(|| Failure::Dataset(format!("bundle is missing \"{k}\"")));
    let table = load_json_table(field("table")?).map_err(|e| Failure::Dataset(format!("table: {e}")))?;
    let pipeline = pipeline_from(field("pipeline")?, "pipeline")?;
    let answers: Vec<String> = serde_json::from_value(field("answers")?.clone())
        .map_err(|e| Failure::Dataset(format!("answers: {e}")))?;
    let matching: Matching = match doc.get("matching") {
        Some(m) => serde_json::from_value(m.clone()).map_err(|e| Failure::Dataset(format!("matching: {e}")))?,
        None => cfg.eval.matching,
    };
    let token_len = match (doc.get("token_len"), doc.get("output_text")) {
        (Some(n), _) => n
            .as_u64()
            .ok_or_else(|| Failure::Dataset("token_len must be a non-negative integer".into()))?,
        (None, Some(Json::String(s))) => ApproxTokenCounter.count(s) as u64,
        _ => ApproxTokenCounter.count(&pipeline.to_json().to_string()) as u64,
    };
    let a = AnswerSet::new(answers, matching).map_err(|e| Failure::Dataset(e.to_string()))?;
    let trace = execute(&pipeline, &table, ex.as_ref());
    let b = total_reward(&trace, &a, token_len, &cfg.reward).map_err(|e| Failure::Dataset(e.to_string()))?;
    ctx.emit_json(&b.to_json())
}

fn cmd_gate(cli: &Cli, ctx: &Ctx, rewards: &Path) -> CmdResult {
    let cfg = load_config(cli)?;
    let doc = read_json(rewards)?;
    let bad = |m: String| Failure::Dataset(m);
    let groups: Vec<(Option<String>, Vec<f64>)> = match &doc {
        Json::Array(items) if items.iter().all(Json::is_number) => {
            vec![(None, items.iter().filter_map(Json::as_f64).collect())]
        }
        Json::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let id = g.get("instance_id").and_then(Json::as_str).map(String::from);
                let rs = g
                    .get("rewards")
                    .and_then(Json::as_array)
                    .filter(|rs| rs.iter().all(Json::is_number))
                    .ok_or_else(|| bad(format!("group {i}: expected \"rewards\": [numbers]")))?;
                Ok((id, rs.iter().filter_map(Json::as_f64).collect()))
            })
            .collect::<Result<_, Failure>>()?,
        _ => return Err(bad("rewards must be an array of numbers or of {instance_id, rewards}".into())),
    };
    let mut out = String::new();
    for (i, (id, rs)) in groups.into_iter().enumerate() {
        let exact = rs
            .iter()
            .map(|&r| ratio_from_f64(r))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("group {i}: {e}")))?;
        let stats = group_stats(&exact).map_err(|e| bad(format!("group {i}: {e}")))?;
        let verdict = vgr_accept(&exact, &cfg.gate).map_err(|e| bad(format!("group {i}: {e}")))?;
        let adv = advantages(&exact, cfg.gate.advantage_epsilon)
            .ok()
            .map(|a| a.iter().map(ratio_to_f64).collect::<Vec<_>>());
        let mut line = json!({
            "instance_id": id,
            "rewards": rs,
            "mean": ratio_to_f64(&stats.mean),
            "variance": ratio_to_f64(&stats.variance),
            "std": stats.std,
            "max": ratio_to_f64(&stats.max),
            "advantages": adv,
            "accepted": verdict == Verdict::Accepted,
        });
        if let Verdict::Rejected(r) = verdict {
            line["rejected_reason"] = json!(r);
        }
        out.push_str(&line.to_string());
        out.push('\n');
    }
    ctx.emit(&out)
}

fn cmd_filter(ctx: &Ctx, input: &Path, max_tokens: usize, stats_path: Option<&Path>) -> CmdResult {
    let (instances, line_errors) = parse_jsonl(&read(input)?);
    if !line_errors.is_empty() {
        let first = &line_errors[0];
        return Err(Failure::Dataset(format!("{}:{}: {}", input.display(), first.line, first.message)));
    }
    let (kept, stats) = filter_dataset(instances, &ApproxTokenCounter, max_tokens);
    ctx.emit(&to_jsonl(&kept))?;
    let text = serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n";
    match stats_path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Other(format!("{}: {e}", p.display()))),
        None => {
            eprint!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let ctx = Ctx { out: cli.out.clone() };
    let result = match &cli.cmd {
        Cmd::Run { dataset, no_prep } => cmd_run(&cli, &ctx, dataset, *no_prep),
        Cmd::Exec { table, pipeline, trace } => cmd_exec(&cli, &ctx, table, pipeline, *trace),
        Cmd::Merge { candidates } => cmd_merge(&ctx, candidates),
        Cmd::Reward { bundle } => cmd_reward(&cli, &ctx, bundle),
        Cmd::Gate { rewards } => cmd_gate(&cli, &ctx, rewards),
        Cmd::FilterDataset { input, max_tokens, stats } => cmd_filter(&ctx, input, *max_tokens, stats.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Dataset(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
