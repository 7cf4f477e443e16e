//! Typed in-memory tables.
//!
//! A [`Table`] is an ordered list of uniquely named columns plus row-major
//! cells. Tables are immutable once built; every operator produces a new one.

use std::fmt;
use std::str::FromStr;

use bigdecimal::BigDecimal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("row {0} does not have the same number of cells as the header")]
    RaggedRow(usize),
    #[error("empty input: a header row is required")]
    EmptyInput,
    #[error("missing key {0:?} in table object")]
    MissingKey(&'static str),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("malformed table JSON: {0}")]
    Json(String),
}

/// A single cell.
///
/// Numbers are arbitrary-precision decimals kept in normalized form (no
/// trailing fractional zeros), so structural equality is numeric equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Null,
    Text(String),
    Number(BigDecimal),
}

impl Value {
    /// Ingestion typing: empty string is `Null`, a full optionally signed
    /// decimal is `Number`, everything else is `Text` (untrimmed).
    pub fn from_cell(raw: &str) -> Value {
        if raw.is_empty() {
            Value::Null
        } else if let Some(d) = parse_decimal(raw) {
            Value::Number(d)
        } else {
            Value::Text(raw.to_string())
        }
    }

    pub fn number(d: BigDecimal) -> Value {
        Value::Number(d.normalized())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_number(&self) -> Option<&BigDecimal> {
        match self {
            Value::Number(d) => Some(d),
            _ => None,
        }
    }

    /// Canonical string rendering; `Null` renders as the empty string.
    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Text(s) => s.clone(),
            Value::Number(d) => render_decimal(d),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::from_cell(s)
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::number(BigDecimal::from(n))
    }
}

/// Parses an optionally signed decimal literal: digits with at most one
/// decimal point, no exponent, no separators, no surrounding whitespace.
pub fn parse_decimal(s: &str) -> Option<BigDecimal> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !digits_ok(int) || !digits_ok(frac) {
        return None;
    }
    BigDecimal::from_str(s.strip_prefix('+').unwrap_or(s))
        .ok()
        .map(|d| d.normalized())
}

/// Plain decimal rendering without trailing zeros, exponent or leading `+`.
pub fn render_decimal(d: &BigDecimal) -> String {
    let n = d.normalized();
    if n.sign() == num_bigint::Sign::NoSign {
        return "0".to_string();
    }
    n.to_plain_string()
}

/// Ordered named columns plus row-major cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Value>>) -> Result<Table, TableError> {
        check_unique(&columns)?;
        if let Some(i) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(TableError::RaggedRow(i));
        }
        Ok(Table { columns, rows })
    }

    /// Builds a table from raw string cells using the ingestion typing rules.
    pub fn from_strings<S: AsRef<str>>(
        columns: Vec<String>,
        rows: &[Vec<S>],
    ) -> Result<Table, TableError> {
        let rows = rows
            .iter()
            .map(|r| r.iter().map(|c| Value::from_cell(c.as_ref())).collect())
            .collect();
        Table::new(columns, rows)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column_values(&self, idx: usize) -> impl Iterator<Item = &Value> {
        self.rows.iter().map(move |r| &r[idx])
    }

    pub fn cells(&self) -> impl Iterator<Item = &Value> {
        self.rows.iter().flatten()
    }

    pub fn cell_count(&self) -> usize {
        self.rows.len() * self.columns.len()
    }

    /// JSON table object `{"header": [...], "rows": [[...]]}` with every cell
    /// rendered as a string.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(TableDoc::from(self)).expect("table doc serializes")
    }

    /// Short stable content digest, used to key scripted QA responses.
    pub fn digest(&self) -> String {
        let doc = serde_json::to_vec(&TableDoc::from(self)).expect("table doc serializes");
        let hash = Sha256::digest(&doc);
        hex::encode(&hash[..8])
    }
}

fn check_unique(columns: &[String]) -> Result<(), TableError> {
    let mut seen = std::collections::HashSet::new();
    for c in columns {
        if !seen.insert(c.as_str()) {
            return Err(TableError::DuplicateColumn(c.clone()));
        }
    }
    Ok(())
}

pub fn cell_count(t: &Table) -> usize {
    t.cell_count()
}

/// Wire form of a table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableDoc {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl From<&Table> for TableDoc {
    fn from(t: &Table) -> Self {
        TableDoc {
            header: t.columns.clone(),
            rows: t
                .rows
                .iter()
                .map(|r| r.iter().map(Value::render).collect())
                .collect(),
        }
    }
}

impl TryFrom<TableDoc> for Table {
    type Error = TableError;

    fn try_from(doc: TableDoc) -> Result<Self, Self::Error> {
        Table::from_strings(doc.header, &doc.rows)
    }
}

impl Serialize for Table {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TableDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Table {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = serde_json::Value::deserialize(d)?;
        load_json_table(&doc).map_err(serde::de::Error::custom)
    }
}

pub fn load_csv(bytes: &[u8]) -> Result<Table, TableError> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(TableError::EmptyInput);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| TableError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    check_unique(&header)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TableError::Csv(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(TableError::RaggedRow(i));
        }
        rows.push(rec.iter().map(Value::from_cell).collect());
    }
    Table::new(header, rows)
}

/// Loads a `{"header": [...], "rows": [[...]]}` object.
pub fn load_json_table(doc: &serde_json::Value) -> Result<Table, TableError> {
    let obj = doc
        .as_object()
        .ok_or_else(|| TableError::Json("expected an object".into()))?;
    let header = obj.get("header").ok_or(TableError::MissingKey("header"))?;
    let rows = obj.get("rows").ok_or(TableError::MissingKey("rows"))?;
    let header: Vec<String> = serde_json::from_value(header.clone())
        .map_err(|e| TableError::Json(format!("header: {e}")))?;
    let rows = rows
        .as_array()
        .ok_or_else(|| TableError::Json("rows: expected an array".into()))?;
    check_unique(&header)?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let cells = row
            .as_array()
            .ok_or_else(|| TableError::Json(format!("row {i}: expected an array")))?;
        if cells.len() != header.len() {
            return Err(TableError::RaggedRow(i));
        }
        let typed = cells
            .iter()
            .map(|c| match c {
                serde_json::Value::String(s) => Ok(Value::from_cell(s)),
                serde_json::Value::Null => Ok(Value::Null),
                serde_json::Value::Number(n) => Ok(Value::from_cell(&n.to_string())),
                other => Err(TableError::Json(format!(
                    "row {i}: unsupported cell {other}"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(typed);
    }
    Table::new(header, out)
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|").replace(['\n', '\r'], " ")
}

/// Pipe-delimited markdown: header, separator, data rows. With `max_rows`,
/// extra rows are replaced by a `... (K rows omitted)` line.
pub fn serialize_markdown(t: &Table, max_rows: Option<usize>) -> String {
    let line = |cells: Vec<String>| format!("| {} |", cells.join(" | "));
    let mut lines = Vec::with_capacity(t.num_rows() + 3);
    lines.push(line(t.columns.iter().map(|c| md_cell(c)).collect()));
    lines.push(line(vec!["---".to_string(); t.num_columns()]));
    let shown = max_rows.map_or(t.num_rows(), |m| m.min(t.num_rows()));
    for row in &t.rows[..shown] {
        lines.push(line(row.iter().map(|v| md_cell(&v.render())).collect()));
    }
    if shown < t.num_rows() {
        lines.push(format!("... ({} rows omitted)", t.num_rows() - shown));
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn num(s: &str) -> Value {
        Value::Number(parse_decimal(s).unwrap())
    }

    #[test]
    fn csv_typing() {
        let t = load_csv(b"a,b\n1,x").unwrap();
        assert_eq!(t.columns(), ["a", "b"]);
        assert_eq!(t.rows(), [vec![num("1"), Value::Text("x".into())]]);
    }

    #[test]
    fn csv_duplicate_header() {
        assert_eq!(
            load_csv(b"a,a\n1,2"),
            Err(TableError::DuplicateColumn("a".into()))
        );
    }

    #[test]
    fn csv_header_only() {
        let t = load_csv(b"a\n").unwrap();
        assert_eq!(t.num_columns(), 1);
        assert_eq!(t.num_rows(), 0);
    }

    #[test]
    fn csv_errors() {
        assert_eq!(load_csv(b""), Err(TableError::EmptyInput));
        assert_eq!(load_csv(b"a,b\n1,2\n3"), Err(TableError::RaggedRow(1)));
    }

    #[test]
    fn csv_keeps_interior_whitespace() {
        let t = load_csv(b"a\n\" x  y \"").unwrap();
        assert_eq!(t.rows()[0][0], Value::Text(" x  y ".into()));
    }

    #[test]
    fn json_table_cases() {
        let t = load_json_table(&serde_json::json!({"header":["Name"],"rows":[["Ada"]]})).unwrap();
        assert_eq!(t.cell_count(), 1);
        assert_eq!(
            load_json_table(&serde_json::json!({"header":["a"],"rows":[["1","2"]]})),
            Err(TableError::RaggedRow(0))
        );
        let t = load_json_table(&serde_json::json!({"header":["n"],"rows":[[""]]})).unwrap();
        assert_eq!(t.rows()[0][0], Value::Null);
        assert_eq!(
            load_json_table(&serde_json::json!({"rows":[]})),
            Err(TableError::MissingKey("header"))
        );
        assert_eq!(
            load_json_table(&serde_json::json!({"header":["a","a"],"rows":[]})),
            Err(TableError::DuplicateColumn("a".into()))
        );
    }

    #[test]
    fn decimal_detection() {
        for s in ["1", "-2", "+3", "0.50", ".5", "5.", "007"] {
            assert!(parse_decimal(s).is_some(), "{s}");
        }
        for s in ["", "+", ".", "1,000", "$5", "1e5", " 1", "1 ", "1.2.3", "NaN", "inf"] {
            assert!(parse_decimal(s).is_none(), "{s}");
        }
    }

    #[test]
    fn number_rendering() {
        assert_eq!(num("7").render(), "7");
        assert_eq!(num("0.50").render(), "0.5");
        assert_eq!(num("+3").render(), "3");
        assert_eq!(num("-0.0").render(), "0");
        assert_eq!(num("1000000").render(), "1000000");
        assert_eq!(num("5.").render(), "5");
        assert_eq!(num(".25").render(), "0.25");
        assert_eq!(num("120.000").render(), "120");
        assert_eq!(num("0.000001").render(), "0.000001");
        assert_eq!(num("1.0"), num("1"));
    }

    #[test]
    fn markdown_format() {
        let t = load_csv(b"a\n1").unwrap();
        assert_eq!(serialize_markdown(&t, None), "| a |\n| --- |\n| 1 |");
        let empty = load_csv(b"a,b\n").unwrap();
        assert_eq!(serialize_markdown(&empty, None), "| a | b |\n| --- | --- |");
        let five = load_csv(b"a\n1\n2\n3\n4\n5").unwrap();
        assert_eq!(
            serialize_markdown(&five, Some(2)),
            "| a |\n| --- |\n| 1 |\n| 2 |\n... (3 rows omitted)"
        );
        let nulls = load_csv(b"a,b\n,x").unwrap();
        assert_eq!(serialize_markdown(&nulls, None).lines().last(), Some("|  | x |"));
    }

    #[test]
    fn cell_counts() {
        let t = Table::from_strings(
            (0..4).map(|i| format!("c{i}")).collect(),
            &vec![vec!["x"; 4]; 3],
        )
        .unwrap();
        assert_eq!(cell_count(&t), 12);
        let t = Table::new((0..4).map(|i| format!("c{i}")).collect(), vec![]).unwrap();
        assert_eq!(cell_count(&t), 0);
        assert_eq!(cell_count(&load_csv(b"a\n1").unwrap()), 1);
    }

    fn text_table() -> impl Strategy<Value = Table> {
        (1usize..5, 0usize..6).prop_flat_map(|(cols, rows)| {
            prop::collection::vec(
                prop::collection::vec("[a-zA-Z ]{1,6}".prop_filter("non-numeric", |s| {
                    parse_decimal(s).is_none()
                }), cols),
                rows,
            )
            .prop_map(move |rows| {
                let header = (0..cols).map(|i| format!("col{i}")).collect();
                Table::from_strings(header, &rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn json_round_trip(t in text_table()) {
            prop_assert_eq!(load_json_table(&t.to_json()).unwrap(), t);
        }

        #[test]
        fn markdown_line_count(t in text_table()) {
            prop_assert_eq!(serialize_markdown(&t, None).lines().count(), t.num_rows() + 2);
        }

        #[test]
        fn ingestion_is_deterministic(cells in prop::collection::vec("[0-9a-z.+-]{0,4}", 1..10)) {
            let csv = format!("h\n{}", cells.iter().map(|c| format!("\"{c}\"")).collect::<Vec<_>>().join("\n"));
            prop_assert_eq!(load_csv(csv.as_bytes()), load_csv(csv.as_bytes()));
        }
    }
}
