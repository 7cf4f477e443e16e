use std::cmp::Ordering;
use std::collections::HashMap;

use super::{Comparator, ExecError, SortOrder};
use bigdecimal::BigDecimal;

use crate::table::{parse_decimal, Table, Value};

fn require_column(t: &Table, column: &str) -> Result<usize, ExecError> {
    t.column_index(column)
        .ok_or_else(|| ExecError::ColumnNotFound(column.to_string()))
}

/// Keeps the requested columns in the input table's order. Unknown names are
/// dropped; it is an error only when none survive.
pub fn exec_select(t: &Table, columns: &[String]) -> Result<Table, ExecError> {
    let keep: Vec<usize> = (0..t.num_columns())
        .filter(|&i| columns.iter().any(|c| c == &t.columns()[i]))
        .collect();
    if keep.is_empty() {
        return Err(ExecError::NoValidColumns);
    }
    let names = keep.iter().map(|&i| t.columns()[i].clone()).collect();
    let rows = t
        .rows()
        .iter()
        .map(|r| keep.iter().map(|&i| r[i].clone()).collect())
        .collect();
    Ok(Table::new(names, rows).expect("projection of a valid table"))
}

/// Evaluates `cell <cmp> value`.
///
/// Two numeric sides (numbers, or text that parses as a decimal) compare
/// numerically, anything else compares on the canonical string rendering. A
/// null cell only satisfies `!=` against a non-null value.
pub fn predicate_holds(cell: &Value, cmp: Comparator, value: &Value) -> bool {
    if cell.is_null() {
        return cmp == Comparator::Ne && !value.is_null();
    }
    if value.is_null() {
        return cmp == Comparator::Ne;
    }
    let ord = match (numeric_view(cell), numeric_view(value)) {
        (Some(a), Some(b)) => a.cmp(&b),
        _ => cell.render().cmp(&value.render()),
    };
    match cmp {
        Comparator::Eq => ord == Ordering::Equal,
        Comparator::Ne => ord != Ordering::Equal,
        Comparator::Gt => ord == Ordering::Greater,
        Comparator::Lt => ord == Ordering::Less,
        Comparator::Ge => ord != Ordering::Less,
        Comparator::Le => ord != Ordering::Greater,
    }
}

fn numeric_view(v: &Value) -> Option<BigDecimal> {
    match v {
        Value::Number(d) => Some(d.clone()),
        Value::Text(s) => parse_decimal(s),
        Value::Null => None,
    }
}

pub fn exec_filter(
    t: &Table,
    column: &str,
    cmp: Comparator,
    value: &Value,
) -> Result<Table, ExecError> {
    let idx = require_column(t, column)?;
    let rows = t
        .rows()
        .iter()
        .filter(|r| predicate_holds(&r[idx], cmp, value))
        .cloned()
        .collect();
    Ok(Table::new(t.columns().to_vec(), rows).expect("row subset of a valid table"))
}

/// Stable sort on one column with nulls last in both directions. The column
/// sorts numerically when every non-null cell is a number, otherwise on the
/// string rendering.
pub fn exec_sort_by(
    t: &Table,
    column: &str,
    order: SortOrder,
    k: Option<usize>,
) -> Result<Table, ExecError> {
    let idx = require_column(t, column)?;
    let numeric = t
        .column_values(idx)
        .all(|v| matches!(v, Value::Null | Value::Number(_)));
    let key_cmp = |a: &Value, b: &Value| -> Ordering {
        match (a, b) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Null, _) => Ordering::Greater,
            (_, Value::Null) => Ordering::Less,
            _ => {
                let ord = match (numeric, a, b) {
                    (true, Value::Number(x), Value::Number(y)) => x.cmp(y),
                    _ => a.render().cmp(&b.render()),
                };
                match order {
                    SortOrder::Asc => ord,
                    SortOrder::Desc => ord.reverse(),
                }
            }
        }
    };
    let mut rows = t.rows().to_vec();
    rows.sort_by(|a, b| key_cmp(&a[idx], &b[idx]));
    if let Some(k) = k {
        rows.truncate(k);
    }
    Ok(Table::new(t.columns().to_vec(), rows).expect("row permutation of a valid table"))
}

/// Distinct values of `column` in first-appearance order with their counts.
/// The count column is `count`, or `count_` when `column` is itself `count`.
pub fn exec_group_by(t: &Table, column: &str) -> Result<Table, ExecError> {
    let idx = require_column(t, column)?;
    let mut order: Vec<&Value> = Vec::new();
    let mut counts: HashMap<&Value, usize> = HashMap::new();
    for v in t.column_values(idx) {
        let n = counts.entry(v).or_insert_with(|| {
            order.push(v);
            0
        });
        *n += 1;
    }
    let count_name = if column == "count" { "count_" } else { "count" };
    let rows = order
        .into_iter()
        .map(|v| vec![v.clone(), Value::from(counts[v] as i64)])
        .collect();
    Ok(Table::new(vec![column.to_string(), count_name.to_string()], rows)
        .expect("two distinct column names"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::load_csv;
    use proptest::prelude::*;

    fn col(t: &Table, name: &str) -> Vec<String> {
        let i = t.column_index(name).unwrap();
        t.column_values(i).map(Value::render).collect()
    }

    #[test]
    fn select_keeps_original_order() {
        let t = load_csv(b"a,b,c\n1,2,3\n4,5,6").unwrap();
        let out = exec_select(&t, &["c".into(), "a".into()]).unwrap();
        assert_eq!(out.columns(), ["a", "c"]);
        assert_eq!(col(&out, "c"), ["3", "6"]);
        let out = exec_select(&t, &["a".into(), "ghost".into()]).unwrap();
        assert_eq!(out.columns(), ["a"]);
        assert_eq!(exec_select(&t, &["ghost".into()]), Err(ExecError::NoValidColumns));
    }

    #[test]
    fn filter_country() {
        let t = load_csv(b"Name,Country\nAda,USA\nBob,UK\nCy,USA").unwrap();
        let out = exec_filter(&t, "Country", Comparator::Eq, &Value::Text("USA".into())).unwrap();
        assert_eq!(out.num_rows(), 2);
        assert_eq!(out.columns(), t.columns());
        assert_eq!(col(&out, "Name"), ["Ada", "Cy"]);
    }

    #[test]
    fn filter_numeric_with_null() {
        let t = load_csv(b"x\n3\n7\n").unwrap();
        let t = Table::new(
            t.columns().to_vec(),
            [t.rows().to_vec(), vec![vec![Value::Null]]].concat(),
        )
        .unwrap();
        let out = exec_filter(&t, "x", Comparator::Gt, &Value::from(5i64)).unwrap();
        assert_eq!(col(&out, "x"), ["7"]);
        let out = exec_filter(&t, "x", Comparator::Ne, &Value::from(3i64)).unwrap();
        assert_eq!(col(&out, "x"), ["7", ""]);
    }

    #[test]
    fn filter_decimal_text_value_is_numeric() {
        let t = load_csv(b"x\n9\n10\n").unwrap();
        let out = exec_filter(&t, "x", Comparator::Gt, &Value::Text("9".into())).unwrap();
        assert_eq!(col(&out, "x"), ["10"]);
        let out = exec_filter(&t, "x", Comparator::Eq, &Value::Text("10.0".into())).unwrap();
        assert_eq!(col(&out, "x"), ["10"]);
    }

    #[test]
    fn filter_edge_cases() {
        let empty = load_csv(b"x\n").unwrap();
        assert_eq!(
            exec_filter(&empty, "x", Comparator::Eq, &Value::Text("q".into())).unwrap(),
            empty
        );
        assert_eq!(
            exec_filter(&empty, "ghost", Comparator::Eq, &Value::Null),
            Err(ExecError::ColumnNotFound("ghost".into()))
        );
        // numeric comparison, not lexicographic: 10 > 9
        let t = load_csv(b"x\n9\n10").unwrap();
        let out = exec_filter(&t, "x", Comparator::Gt, &Value::from(9i64)).unwrap();
        assert_eq!(col(&out, "x"), ["10"]);
        // mixed: text cell vs number value compares as strings
        let t = load_csv(b"x\nabc\n5").unwrap();
        let out = exec_filter(&t, "x", Comparator::Eq, &Value::from(5i64)).unwrap();
        assert_eq!(col(&out, "x"), ["5"]);
    }

    #[test]
    fn sort_cases() {
        let t = load_csv(b"v\n2\n9\n5").unwrap();
        let out = exec_sort_by(&t, "v", SortOrder::Desc, Some(1)).unwrap();
        assert_eq!(col(&out, "v"), ["9"]);

        let sorted = load_csv(b"v,w\n1,a\n2,b\n2,c\n3,d").unwrap();
        assert_eq!(exec_sort_by(&sorted, "v", SortOrder::Asc, None).unwrap(), sorted);

        let t = load_csv(b"v\n5\n\"\"\n1").unwrap();
        assert_eq!(col(&exec_sort_by(&t, "v", SortOrder::Asc, None).unwrap(), "v"), ["1", "5", ""]);
        assert_eq!(col(&exec_sort_by(&t, "v", SortOrder::Desc, None).unwrap(), "v"), ["5", "1", ""]);

        let t = load_csv(b"v\nb\n10\na").unwrap();
        assert_eq!(col(&exec_sort_by(&t, "v", SortOrder::Asc, None).unwrap(), "v"), ["10", "a", "b"]);

        assert_eq!(exec_sort_by(&t, "v", SortOrder::Asc, Some(10)).unwrap().num_rows(), 3);
        assert_eq!(
            exec_sort_by(&t, "w", SortOrder::Asc, None),
            Err(ExecError::ColumnNotFound("w".into()))
        );
    }

    #[test]
    fn desc_sort_is_stable() {
        let t = load_csv(b"v,w\n1,a\n2,b\n1,c\n2,d").unwrap();
        let out = exec_sort_by(&t, "v", SortOrder::Desc, None).unwrap();
        assert_eq!(col(&out, "w"), ["b", "d", "a", "c"]);
    }

    #[test]
    fn group_by_cases() {
        let t = load_csv(b"Team\nA\nB\nA").unwrap();
        let out = exec_group_by(&t, "Team").unwrap();
        assert_eq!(out.columns(), ["Team", "count"]);
        assert_eq!(col(&out, "Team"), ["A", "B"]);
        assert_eq!(col(&out, "count"), ["2", "1"]);

        let empty = load_csv(b"Team\n").unwrap();
        let out = exec_group_by(&empty, "Team").unwrap();
        assert_eq!(out.num_columns(), 2);
        assert_eq!(out.num_rows(), 0);

        let t = load_csv(b"count\n1\n1").unwrap();
        let out = exec_group_by(&t, "count").unwrap();
        assert_eq!(out.columns(), ["count", "count_"]);
        assert_eq!(col(&out, "count_"), ["2"]);

        let t = load_csv(b"x\n\"\"\n1.0\n1\n").unwrap();
        let out = exec_group_by(&t, "x").unwrap();
        assert_eq!(col(&out, "x"), ["", "1"]);
        assert_eq!(col(&out, "count"), ["1", "2"]);
    }

    fn small_table() -> impl Strategy<Value = Table> {
        (1usize..=6, 0usize..=8).prop_flat_map(|(cols, rows)| {
            prop::collection::vec(
                prop::collection::vec(prop::sample::select(vec!["", "1", "2", "10", "a", "b", "-1.5"]), cols),
                rows,
            )
            .prop_map(move |cells| {
                Table::from_strings((0..cols).map(|i| format!("c{i}")).collect(), &cells).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn select_properties(t in small_table(), pick in prop::collection::vec(0usize..8, 1..4)) {
            let req: Vec<String> = pick.iter().map(|i| format!("c{i}")).collect();
            if let Ok(out) = exec_select(&t, &req) {
                prop_assert!(out.columns().iter().all(|c| t.columns().contains(c)));
                prop_assert_eq!(out.num_rows(), t.num_rows());
            }
        }

        #[test]
        fn filter_is_subsequence(t in small_table(), cmp in prop::sample::select(Comparator::ALL.to_vec()),
                                 v in prop::sample::select(vec!["", "1", "2", "a"])) {
            let out = exec_filter(&t, "c0", cmp, &Value::from_cell(v)).unwrap();
            prop_assert_eq!(out.columns(), t.columns());
            let mut it = t.rows().iter();
            for r in out.rows() {
                prop_assert!(it.any(|x| x == r));
            }
        }

        #[test]
        fn sort_is_ordered_permutation(t in small_table(), desc in any::<bool>()) {
            let order = if desc { SortOrder::Desc } else { SortOrder::Asc };
            let out = exec_sort_by(&t, "c0", order, None).unwrap();
            let mut a = t.rows().to_vec();
            let mut b = out.rows().to_vec();
            let key = |r: &Vec<Value>| r.iter().map(Value::render).collect::<Vec<_>>();
            a.sort_by_key(key);
            b.sort_by_key(key);
            prop_assert_eq!(a, b);
            let numeric = t.column_values(0).all(|v| !matches!(v, Value::Text(_)));
            for w in out.rows().windows(2) {
                let (x, y) = (&w[0][0], &w[1][0]);
                if x.is_null() || y.is_null() {
                    prop_assert!(!x.is_null() || y.is_null());
                    continue;
                }
                let ord = if numeric {
                    x.as_number().unwrap().cmp(y.as_number().unwrap())
                } else {
                    x.render().cmp(&y.render())
                };
                let in_order = if desc { ord != Ordering::Less } else { ord != Ordering::Greater };
                prop_assert!(in_order);
            }
        }

        #[test]
        fn group_counts_sum(t in small_table()) {
            let out = exec_group_by(&t, "c0").unwrap();
            let total: i64 = out.column_values(1).map(|v| v.render().parse::<i64>().unwrap()).sum();
            prop_assert_eq!(total as usize, t.num_rows());
            let distinct: std::collections::HashSet<_> = t.column_values(0).collect();
            prop_assert_eq!(out.num_rows(), distinct.len());
        }
    }
}
