//! Seeded random tables for property tests and demo corpora.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::table::{CellValue, HeaderNode, HeaderTree, TableSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub max_rows: usize,
    pub max_cols: usize,
    pub max_depth: usize,
    /// Probability that a cell holds a number.
    pub numeric_ratio: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { max_rows: 20, max_cols: 12, max_depth: 3, numeric_ratio: 0.9 }
    }
}

const GROUPS: &[&str] = &[
    "Revenue", "Cost", "Total", "Male", "Female", "Urban", "Rural", "North", "South", "Exports", "Imports",
    "Assets", "A>B", "x@y", "Note: adj.", "\"Quoted\"", "Größe", "Share (%)", "Group 1", "2019 plan",
];
const LEAVES: &[&str] = &["Q1", "Q2", "Q3", "Q4", "Count", "Rate", "Mean", "Min", "Max", "Total", "Jan", "Feb", "n"];

fn label(rng: &mut ChaCha8Rng, pool: &[&str], taken: &[String], fallback: &str) -> String {
    for _ in 0..4 {
        let l = pool.choose(rng).unwrap().to_string();
        if !taken.contains(&l) {
            return l;
        }
    }
    (taken.len()..).map(|i| format!("{fallback} {i}")).find(|l| !taken.contains(l)).unwrap()
}

/// Splits `total` into `parts` positive integers.
fn partition(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<usize> {
    let mut sizes = vec![1; parts];
    for _ in 0..total - parts {
        let i = rng.random_range(0..parts);
        sizes[i] += 1;
    }
    sizes
}

fn forest(rng: &mut ChaCha8Rng, leaves: usize, depth: usize) -> Vec<HeaderNode> {
    if depth <= 1 {
        let mut taken = Vec::new();
        for _ in 0..leaves {
            let l = label(rng, LEAVES, &taken, "Item");
            taken.push(l);
        }
        return taken.into_iter().map(HeaderNode::leaf).collect();
    }
    let groups = rng.random_range(1..=leaves.min(4));
    let mut taken = Vec::new();
    let mut out = Vec::new();
    for size in partition(rng, leaves, groups) {
        let l = label(rng, GROUPS, &taken, "Group");
        taken.push(l.clone());
        // Occasionally leave a single-leaf group shallow.
        if size == 1 && rng.random_bool(0.3) {
            out.push(HeaderNode::leaf(l));
        } else {
            out.push(HeaderNode::branch(l, forest(rng, size, depth - 1)));
        }
    }
    out
}

fn year_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<HeaderNode> {
    let start = rng.random_range(1990..2015);
    (0..n).map(|i| HeaderNode::leaf((start + i).to_string())).collect()
}

fn cell(rng: &mut ChaCha8Rng, numeric_ratio: f64) -> String {
    if !rng.random_bool(numeric_ratio) {
        return ["n/a", "", "-", "see note"].choose(rng).unwrap().to_string();
    }
    match rng.random_range(0..10) {
        0 => format!("{}.{}", rng.random_range(0..100), rng.random_range(0..10)),
        1 => format!("-{}", rng.random_range(1..500)),
        2 => format!("{}%", rng.random_range(0..100)),
        3 => {
            let v: u32 = rng.random_range(1000..2_000_000);
            let s = v.to_string();
            let mut out = String::new();
            for (i, ch) in s.chars().enumerate() {
                if i > 0 && (s.len() - i).is_multiple_of(3) {
                    out.push(',');
                }
                out.push(ch);
            }
            out
        }
        _ => rng.random_range(0..1000).to_string(),
    }
}

pub fn random_table_with(rng: &mut ChaCha8Rng, table_id: &str, opts: &SynthOptions) -> TableSpec {
    let n_cols = rng.random_range(1..=opts.max_cols);
    let n_rows = rng.random_range(1..=opts.max_rows);
    let col_depth = rng.random_range(1..=opts.max_depth.min(n_cols.max(1)).max(1));
    let columns = forest(rng, n_cols, col_depth);
    let rows = if n_rows >= 2 && rng.random_bool(0.35) {
        year_rows(rng, n_rows)
    } else {
        let row_depth = rng.random_range(1..=opts.max_depth.min(2));
        forest(rng, n_rows, row_depth)
    };
    let col_tree = HeaderTree::new(columns).expect("generated column tree is valid");
    let row_tree = HeaderTree::new(rows).expect("generated row tree is valid");
    let cells = (0..n_rows).map(|_| (0..n_cols).map(|_| CellValue::new(cell(rng, opts.numeric_ratio))).collect()).collect();
    let title = rng.random_bool(0.5).then(|| format!("Table {table_id}"));
    TableSpec::new(table_id, title, col_tree, row_tree, cells).expect("generated table is consistent")
}

pub fn random_table(seed: u64) -> TableSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_table_with(&mut rng, &format!("synth-{seed}"), &SynthOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_and_deterministic() {
        for seed in 0..300 {
            let t = random_table(seed);
            assert!(t.n_rows() <= 20 && t.n_cols() <= 12);
            assert!(t.col_tree.depth() <= 3 && t.row_tree.depth() <= 3);
            assert_eq!(t, random_table(seed));
        }
    }
}
