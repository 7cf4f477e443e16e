//! Consensus merge of candidate pipelines.
//!
//! All `select` columns are unioned into a single leading select, every
//! `add_column` is kept, and the remaining operators vote through a weighted
//! prefix tree whose heaviest root-to-leaf path is taken.

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::ops::{Operator, OperatorSpec, Pipeline};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MergeError {
    #[error("no candidate pipelines to merge")]
    EmptyCandidates,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrieNode {
    pub key: String,
    /// Spec from the first candidate that inserted this node.
    pub spec: OperatorSpec,
    pub weight: usize,
    pub children: Vec<usize>,
}

/// Arena-backed trie. The root is implicit; its children are `root_children`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OperationTrie {
    nodes: Vec<TrieNode>,
    root_children: Vec<usize>,
}

impl OperationTrie {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: usize) -> &TrieNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TrieNode] {
        &self.nodes
    }

    pub fn root_children(&self) -> &[usize] {
        &self.root_children
    }

    pub fn children(&self, parent: Option<usize>) -> &[usize] {
        match parent {
            None => &self.root_children,
            Some(p) => &self.nodes[p].children,
        }
    }

    pub fn insert(&mut self, seq: &[OperatorSpec]) {
        let mut parent = None;
        for spec in seq {
            let key = spec.canonical_key();
            let found = self
                .children(parent)
                .iter()
                .copied()
                .find(|&c| self.nodes[c].key == key);
            let id = match found {
                Some(id) => id,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(TrieNode {
                        key,
                        spec: spec.clone(),
                        weight: 0,
                        children: Vec::new(),
                    });
                    match parent {
                        None => self.root_children.push(id),
                        Some(p) => self.nodes[p].children.push(id),
                    }
                    id
                }
            };
            self.nodes[id].weight += 1;
            parent = Some(id);
        }
    }

    pub fn total_weight(&self) -> usize {
        self.nodes.iter().map(|n| n.weight).sum()
    }
}

pub fn build_trie<S: AsRef<[OperatorSpec]>>(stripped: &[S]) -> OperationTrie {
    let mut trie = OperationTrie::new();
    for seq in stripped {
        trie.insert(seq.as_ref());
    }
    trie
}

struct Best {
    weight: usize,
    nodes: Vec<usize>,
}

fn better(trie: &OperationTrie, a: &Best, b: &Best) -> bool {
    let keys = |p: &Best| p.nodes.iter().map(|&i| trie.nodes[i].key.as_str()).collect::<Vec<_>>();
    match a.weight.cmp(&b.weight).then(a.nodes.len().cmp(&b.nodes.len())) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => keys(a) < keys(b),
    }
}

fn best_suffix(trie: &OperationTrie, parent: Option<usize>) -> Best {
    let mut best: Option<Best> = None;
    for &c in trie.children(parent) {
        let mut cand = best_suffix(trie, Some(c));
        cand.weight += trie.nodes[c].weight;
        cand.nodes.insert(0, c);
        if best.as_ref().is_none_or(|b| better(trie, &cand, b)) {
            best = Some(cand);
        }
    }
    best.unwrap_or(Best {
        weight: 0,
        nodes: Vec::new(),
    })
}

/// Root-to-leaf path with the largest weight sum; ties go to the longer path,
/// then to the lexicographically smaller key sequence.
pub fn best_path(trie: &OperationTrie) -> Vec<OperatorSpec> {
    best_suffix(trie, None)
        .nodes
        .into_iter()
        .map(|i| trie.nodes[i].spec.clone())
        .collect()
}

/// Operators that take part in trie voting (everything but select and add_column).
pub fn strip(p: &Pipeline) -> Vec<OperatorSpec> {
    p.iter()
        .filter(|s| !matches!(s.op, Operator::Select { .. } | Operator::AddColumn { .. }))
        .cloned()
        .collect()
}

pub fn merge_pipelines(candidates: &[Pipeline]) -> Result<Pipeline, MergeError> {
    if candidates.is_empty() {
        return Err(MergeError::EmptyCandidates);
    }
    let mut out = Vec::new();

    let mut union: Vec<String> = Vec::new();
    let mut any_select = false;
    for spec in candidates.iter().flat_map(|p| p.iter()) {
        if let Operator::Select { columns } = &spec.op {
            any_select = true;
            for c in columns {
                if !union.contains(c) {
                    union.push(c.clone());
                }
            }
        }
    }
    if any_select {
        out.push(OperatorSpec::select(union));
    }

    let mut seen = HashSet::new();
    for spec in candidates.iter().flat_map(|p| p.iter()) {
        if let Operator::AddColumn {
            new_column,
            description,
        } = &spec.op
        {
            if seen.insert((new_column.clone(), description.clone())) {
                out.push(spec.clone());
            }
        }
    }

    let stripped: Vec<_> = candidates.iter().map(strip).collect();
    out.extend(best_path(&build_trie(&stripped)));
    Ok(Pipeline::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{Comparator, SortOrder};
    use crate::table::Value;
    use proptest::prelude::*;

    fn f(col: &str, v: &str) -> OperatorSpec {
        OperatorSpec::filter(col, Comparator::Eq, Value::Text(v.into()))
    }

    fn s(col: &str) -> OperatorSpec {
        OperatorSpec::sort_by(col, SortOrder::Desc, None)
    }

    fn keys(ops: &[OperatorSpec]) -> Vec<String> {
        ops.iter().map(OperatorSpec::canonical_key).collect()
    }

    #[test]
    fn majority_branch_wins() {
        let p1 = Pipeline::new(vec![f("A", "x"), s("B")]);
        let p3 = Pipeline::new(vec![f("A", "y")]);
        let merged = merge_pipelines(&[p1.clone(), p1.clone(), p3]).unwrap();
        assert_eq!(merged, p1);
    }

    #[test]
    fn single_candidate_unchanged() {
        let p = Pipeline::new(vec![OperatorSpec::select(["a"]), f("a", "1")]);
        assert_eq!(merge_pipelines(std::slice::from_ref(&p)).unwrap(), p);
    }

    #[test]
    fn longer_path_on_extension() {
        let g = OperatorSpec::group_by("g");
        let merged = merge_pipelines(&[
            Pipeline::new(vec![f("A", "1")]),
            Pipeline::new(vec![f("A", "1"), g.clone()]),
        ])
        .unwrap();
        assert_eq!(merged.ops, [f("A", "1"), g]);
    }

    #[test]
    fn trie_weights() {
        let t = build_trie(&[vec![f("A", "1"), s("B")], vec![f("A", "1"), s("B")]]);
        assert_eq!(t.nodes().iter().map(|n| n.weight).collect::<Vec<_>>(), [2, 2]);

        let t = build_trie(&[vec![f("A", "1"), s("B")], vec![f("A", "1"), s("C")]]);
        assert_eq!(t.root_children().len(), 1);
        let root = t.root_children()[0];
        assert_eq!(t.node(root).weight, 2);
        let kids: Vec<usize> = t.node(root).children.iter().map(|&c| t.node(c).weight).collect();
        assert_eq!(kids, [1, 1]);

        let t = build_trie(&[Vec::<OperatorSpec>::new(), Vec::new()]);
        assert!(t.is_empty());
        assert!(best_path(&t).is_empty());
    }

    #[test]
    fn explanation_does_not_split_nodes() {
        let a = f("A", "1").with_explanation("keep ones");
        let b = f("A", "1").with_explanation("only rows where A is 1");
        let t = build_trie(&[vec![a.clone()], vec![b]]);
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.node(0).weight, 2);
        assert_eq!(best_path(&t), [a]);
    }

    #[test]
    fn lexicographic_tie_break() {
        let t = build_trie(&[vec![s("b")], vec![s("a")]]);
        assert_eq!(keys(&best_path(&t)), keys(&[s("a")]));
    }

    #[test]
    fn select_union_and_add_columns() {
        let add1 = OperatorSpec::add_column("n", "desc one");
        let add2 = OperatorSpec::add_column("n", "desc two");
        let merged = merge_pipelines(&[
            Pipeline::new(vec![OperatorSpec::select(["b", "a"]), add1.clone(), f("a", "1")]),
            Pipeline::new(vec![add1.clone(), OperatorSpec::select(["c", "a"]), add2.clone()]),
            Pipeline::new(vec![f("a", "1")]),
        ])
        .unwrap();
        assert_eq!(
            merged.ops,
            [OperatorSpec::select(["b", "a", "c"]), add1, add2, f("a", "1")]
        );
    }

    #[test]
    fn no_select_no_union() {
        let merged = merge_pipelines(&[Pipeline::new(vec![s("x")])]).unwrap();
        assert_eq!(merged.ops, [s("x")]);
        assert_eq!(merge_pipelines(&[]), Err(MergeError::EmptyCandidates));
    }

    fn vocab_op() -> impl Strategy<Value = OperatorSpec> {
        (0usize..8).prop_map(|i| match i {
            0..=3 => f("c", &i.to_string()),
            4 | 5 => s(&format!("k{i}")),
            6 => OperatorSpec::group_by("g"),
            _ => OperatorSpec::clean_column("c", "tidy"),
        })
    }

    proptest! {
        #[test]
        fn weight_conservation(seqs in prop::collection::vec(prop::collection::vec(vocab_op(), 0..5), 0..6)) {
            let t = build_trie(&seqs);
            prop_assert_eq!(t.total_weight(), seqs.iter().map(Vec::len).sum::<usize>());
            for n in t.nodes() {
                let ks: HashSet<&str> = n.children.iter().map(|&c| t.node(c).key.as_str()).collect();
                prop_assert_eq!(ks.len(), n.children.len());
            }
        }

        #[test]
        fn select_union_is_union(cols in prop::collection::vec(prop::collection::vec("[a-d]", 1..3), 1..5)) {
            let cands: Vec<Pipeline> = cols.iter().map(|c| Pipeline::new(vec![OperatorSpec::select(c.clone())])).collect();
            let merged = merge_pipelines(&cands).unwrap();
            let Operator::Select { columns } = &merged.ops[0].op else { panic!("expected select") };
            let want: HashSet<&String> = cols.iter().flatten().collect();
            let got: HashSet<&String> = columns.iter().collect();
            prop_assert_eq!(got, want);
        }
    }
}
