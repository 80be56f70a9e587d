use std::collections::BTreeMap;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{ForgeError, Level, TaskCategory, TrajectoryInstance};
use crate::table::TableSpec;

/// One category's summary: instance count and mean evidence boxes and steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: TaskCategory,
    pub count: u64,
    pub avg_bbox: Decimal,
    pub avg_steps: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: Level,
    pub count: u64,
    pub avg_bbox: Decimal,
    pub avg_steps: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: u64,
    pub avg_bbox: Decimal,
    pub avg_steps: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub tables: usize,
    pub avg_rows: f64,
    pub avg_cols: f64,
    /// Mean over tables of the deeper of the two header trees.
    pub avg_header_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub avg_question_words: f64,
    pub avg_rationale_words: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub per_category: Vec<CategoryRow>,
    pub per_level: Vec<LevelRow>,
    pub overall: Aggregate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<TextStats>,
}

/// Count-weighted means of (count, avg_bbox, avg_steps) triples.
fn weighted<'a>(rows: impl Iterator<Item = &'a CategoryRow>) -> Aggregate {
    let (mut n, mut b, mut s) = (0u64, Decimal::ZERO, Decimal::ZERO);
    for r in rows {
        n += r.count;
        b += Decimal::from(r.count) * r.avg_bbox;
        s += Decimal::from(r.count) * r.avg_steps;
    }
    if n == 0 {
        return Aggregate { count: 0, avg_bbox: Decimal::ZERO, avg_steps: Decimal::ZERO };
    }
    let d = Decimal::from(n);
    Aggregate { count: n, avg_bbox: b / d, avg_steps: s / d }
}

/// Per-level and overall aggregates from published or computed category rows.
pub fn stats_from_rows(rows: &[CategoryRow]) -> Result<StatsReport, ForgeError> {
    if rows.is_empty() || rows.iter().all(|r| r.count == 0) {
        return Err(ForgeError::EmptyManifest);
    }
    let per_level = Level::ALL
        .into_iter()
        .filter_map(|level| {
            let agg = weighted(rows.iter().filter(|r| r.category.level() == level));
            (agg.count > 0).then_some(LevelRow { level, count: agg.count, avg_bbox: agg.avg_bbox, avg_steps: agg.avg_steps })
        })
        .collect();
    Ok(StatsReport {
        per_category: rows.to_vec(),
        per_level,
        overall: weighted(rows.iter()),
        shape: None,
        text: None,
    })
}

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Full report over synthesized instances and the tables they came from.
pub fn compute_stats(instances: &[TrajectoryInstance], tables: &[TableSpec]) -> Result<StatsReport, ForgeError> {
    if instances.is_empty() {
        return Err(ForgeError::EmptyManifest);
    }
    let mut sums: BTreeMap<TaskCategory, (u64, u64, u64)> = BTreeMap::new();
    for i in instances {
        let e = sums.entry(i.category).or_default();
        e.0 += 1;
        e.1 += i.total_boxes() as u64;
        e.2 += i.steps.len() as u64;
    }
    let rows: Vec<CategoryRow> = sums
        .into_iter()
        .map(|(category, (n, b, s))| CategoryRow {
            category,
            count: n,
            avg_bbox: Decimal::from(b) / Decimal::from(n),
            avg_steps: Decimal::from(s) / Decimal::from(n),
        })
        .collect();
    let mut report = stats_from_rows(&rows)?;
    if !tables.is_empty() {
        let t = tables.len() as f64;
        report.shape = Some(ShapeStats {
            tables: tables.len(),
            avg_rows: tables.iter().map(|s| s.n_rows() as f64).sum::<f64>() / t,
            avg_cols: tables.iter().map(|s| s.n_cols() as f64).sum::<f64>() / t,
            avg_header_depth: tables.iter().map(|s| s.col_tree.depth().max(s.row_tree.depth()) as f64).sum::<f64>() / t,
        });
    }
    let n = instances.len() as f64;
    report.text = Some(TextStats {
        avg_question_words: instances.iter().map(|i| words(&i.question) as f64).sum::<f64>() / n,
        avg_rationale_words: instances
            .iter()
            .map(|i| i.steps.iter().map(|s| words(&s.text)).sum::<usize>() as f64)
            .sum::<f64>()
            / n,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(category: TaskCategory, count: u64, b: &str, s: &str) -> CategoryRow {
        CategoryRow { category, count, avg_bbox: b.parse().unwrap(), avg_steps: s.parse().unwrap() }
    }

    #[test]
    fn weighted_identity() {
        let rows = [row(TaskCategory::Retrieval, 3, "2", "4"), row(TaskCategory::Counting, 1, "6", "1")];
        let r = stats_from_rows(&rows).unwrap();
        assert_eq!(r.overall.count, 4);
        assert_eq!(r.overall.avg_bbox, Decimal::from(3));
        assert_eq!(r.overall.avg_steps, "3.25".parse::<Decimal>().unwrap());
        assert_eq!(r.per_level.len(), 2);
    }

    #[test]
    fn empty_input() {
        assert_eq!(stats_from_rows(&[]), Err(ForgeError::EmptyManifest));
        assert_eq!(compute_stats(&[], &[]), Err(ForgeError::EmptyManifest));
    }
}
