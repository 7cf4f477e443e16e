//! Independent reference implementations used by the integration tests.
//! Nothing here calls into tableprep-core.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

/// Plain f64 group-normalized advantages with population std.
pub fn advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    rewards.iter().map(|r| (r - mean) / (std + eps)).collect()
}

/// Length penalty as a reduced fraction (numerator, denominator).
pub fn length_reward(len: i64, l_max: i64, l_cache: i64) -> (i64, i64) {
    let soft = l_max - l_cache;
    if len <= soft {
        (0, 1)
    } else if len <= l_max {
        reduce(soft - len, l_cache)
    } else {
        (-1, 1)
    }
}

pub fn reduce(num: i64, den: i64) -> (i64, i64) {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 { a.abs() } else { gcd(b, a % b) }
    }
    let g = gcd(num, den).max(1);
    let s = if den < 0 { -1 } else { 1 };
    (s * num / g, s * den / g)
}

/// True for an optionally signed run of digits with at most one point.
pub fn is_decimal(s: &str) -> bool {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let mut dots = 0;
    let mut digits = 0;
    for c in body.chars() {
        match c {
            '.' => dots += 1,
            '0'..='9' => digits += 1,
            _ => return false,
        }
    }
    dots <= 1 && digits > 0
}

/// Canonical decimal text: no sign on zero, no leading `+`, no leading
/// integer zeros, no trailing fractional zeros.
pub fn canonical_decimal(s: &str) -> String {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let int = int.trim_start_matches('0');
    let frac = frac.trim_end_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let mut out = String::new();
    if neg && !(int == "0" && frac.is_empty()) {
        out.push('-');
    }
    out.push_str(int);
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    out
}

/// Rendering of a raw ingested cell: decimals canonicalized, rest verbatim.
pub fn render_cell(raw: &str) -> String {
    if is_decimal(raw) { canonical_decimal(raw) } else { raw.to_string() }
}

/// Does every answer appear verbatim among the rendered cells?
pub fn cell_focused(cells: &[Vec<String>], answers: &[String]) -> bool {
    let rendered: HashSet<String> = cells.iter().flatten().map(|c| render_cell(c)).collect();
    answers.iter().all(|a| rendered.contains(a))
}

/// Rendered grid: column names plus rows of rendered cells, "" for null.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Grid {
    fn col(&self, name: &str) -> usize {
        self.columns.iter().position(|c| c == name).expect("column exists")
    }
}

pub fn select(g: &Grid, wanted: &[String]) -> Option<Grid> {
    let mut keep = Vec::new();
    for (i, c) in g.columns.iter().enumerate() {
        if wanted.contains(c) {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return None;
    }
    Some(Grid {
        columns: keep.iter().map(|&i| g.columns[i].clone()).collect(),
        rows: g.rows.iter().map(|r| keep.iter().map(|&i| r[i].clone()).collect()).collect(),
    })
}

fn to_f64(s: &str) -> Option<f64> {
    if is_decimal(s) { s.parse().ok() } else { None }
}

pub fn holds(cell: &str, cmp: &str, value: &str) -> bool {
    if cell.is_empty() {
        return cmp == "!=" && !value.is_empty();
    }
    if value.is_empty() {
        return cmp == "!=";
    }
    let ord = match (to_f64(cell), to_f64(value)) {
        (Some(a), Some(b)) => a.partial_cmp(&b).unwrap(),
        _ => render_cell(cell).as_bytes().cmp(render_cell(value).as_bytes()),
    };
    match cmp {
        "==" => ord == Ordering::Equal,
        "!=" => ord != Ordering::Equal,
        ">" => ord == Ordering::Greater,
        "<" => ord == Ordering::Less,
        ">=" => ord != Ordering::Less,
        "<=" => ord != Ordering::Greater,
        other => panic!("unknown comparator {other}"),
    }
}

pub fn filter(g: &Grid, column: &str, cmp: &str, value: &str) -> Grid {
    let i = g.col(column);
    Grid {
        columns: g.columns.clone(),
        rows: g.rows.iter().filter(|r| holds(&r[i], cmp, value)).cloned().collect(),
    }
}

/// Insertion sort, which is stable by construction.
pub fn sort_by(g: &Grid, column: &str, desc: bool, k: Option<usize>) -> Grid {
    let i = g.col(column);
    let numeric = g.rows.iter().all(|r| r[i].is_empty() || to_f64(&r[i]).is_some());
    let before = |a: &str, b: &str| -> bool {
        if a.is_empty() {
            return false;
        }
        if b.is_empty() {
            return true;
        }
        let ord = if numeric {
            to_f64(a).unwrap().partial_cmp(&to_f64(b).unwrap()).unwrap()
        } else {
            a.as_bytes().cmp(b.as_bytes())
        };
        if desc { ord == Ordering::Greater } else { ord == Ordering::Less }
    };
    let mut rows: Vec<Vec<String>> = Vec::new();
    for r in &g.rows {
        let mut at = rows.len();
        while at > 0 && before(&r[i], &rows[at - 1][i]) {
            at -= 1;
        }
        rows.insert(at, r.clone());
    }
    if let Some(k) = k {
        rows.truncate(k);
    }
    Grid { columns: g.columns.clone(), rows }
}

pub fn group_by(g: &Grid, column: &str) -> Grid {
    let i = g.col(column);
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for r in &g.rows {
        let c = counts.entry(r[i].clone()).or_insert(0);
        if *c == 0 {
            order.push(r[i].clone());
        }
        *c += 1;
    }
    let count_name = if column == "count" { "count_" } else { "count" };
    Grid {
        columns: vec![column.to_string(), count_name.to_string()],
        rows: order.into_iter().map(|v| {
            let n = counts[&v].to_string();
            vec![v, n]
        }).collect(),
    }
}

/// Exhaustive best path over the prefix tree of key sequences: every
/// distinct prefix is a node whose weight is the number of sequences that
/// start with it; leaves are prefixes with no one-step extension.
pub fn best_path(seqs: &[Vec<String>]) -> Vec<String> {
    let mut weight: HashMap<Vec<String>, usize> = HashMap::new();
    for s in seqs {
        for len in 1..=s.len() {
            *weight.entry(s[..len].to_vec()).or_insert(0) += 1;
        }
    }
    let prefixes: Vec<&Vec<String>> = weight.keys().collect();
    let is_leaf = |p: &Vec<String>| {
        !prefixes.iter().any(|q| q.len() == p.len() + 1 && q[..p.len()] == p[..])
    };
    let mut best: Option<(usize, Vec<String>)> = None;
    for p in prefixes.iter().filter(|p| is_leaf(p)) {
        let score: usize = (1..=p.len()).map(|l| weight[&p[..l].to_vec()]).sum();
        let better = match &best {
            None => true,
            Some((bs, bp)) => {
                score > *bs
                    || (score == *bs && p.len() > bp.len())
                    || (score == *bs && p.len() == bp.len() && p.as_slice() < bp.as_slice())
            }
        };
        if better {
            best = Some((score, (*p).clone()));
        }
    }
    best.map(|(_, p)| p).unwrap_or_default()
}
