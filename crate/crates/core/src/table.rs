//! Hierarchical table model: header trees, the data grid and path indexing.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::parse_numeric;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("duplicate sibling label {label:?} under {parent}")]
    DuplicateSibling { parent: String, label: String },
    #[error("header path not found: {0}")]
    PathNotFound(HeaderPath),
    #[error("header path does not address a leaf: {0}")]
    PathNotLeaf(HeaderPath),
}

/// Root-to-node sequence of header labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HeaderPath(pub Vec<String>);

impl HeaderPath {
    pub fn new<S: Into<String>>(segments: impl IntoIterator<Item = S>) -> Self {
        HeaderPath(segments.into_iter().map(Into::into).collect())
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<&str> {
        self.0.last().map(String::as_str)
    }

    pub fn ends_with(&self, suffix: &[String]) -> bool {
        self.0.ends_with(suffix)
    }

    pub fn child(&self, label: &str) -> HeaderPath {
        let mut v = self.0.clone();
        v.push(label.to_string());
        HeaderPath(v)
    }

    /// Labels joined with a single space, as used in question text.
    pub fn spoken(&self) -> String {
        self.0.join(" ")
    }
}

impl fmt::Display for HeaderPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(">"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderNode {
    pub label: String,
    pub children: Vec<HeaderNode>,
    pub leaf_span: usize,
}

impl HeaderNode {
    pub fn leaf(label: impl Into<String>) -> Self {
        HeaderNode { label: label.into(), children: Vec::new(), leaf_span: 1 }
    }

    pub fn branch(label: impl Into<String>, children: Vec<HeaderNode>) -> Self {
        let leaf_span = if children.is_empty() {
            1
        } else {
            children.iter().map(|c| c.leaf_span).sum()
        };
        HeaderNode { label: label.into(), children, leaf_span }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn depth(&self) -> usize {
        1 + self.children.iter().map(HeaderNode::depth).max().unwrap_or(0)
    }
}

/// Flattened view of one header node, in pre-order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeInfo {
    pub path: HeaderPath,
    /// 0-based level; roots are level 0.
    pub level: usize,
    /// Half-open range of leaf indices covered by the node.
    pub leaf_start: usize,
    pub leaf_end: usize,
    pub is_leaf: bool,
}

#[derive(Debug, Clone)]
pub struct HeaderTree {
    roots: Vec<HeaderNode>,
    depth: usize,
    nodes: Vec<NodeInfo>,
    leaves: Vec<HeaderPath>,
    path_index: HashMap<HeaderPath, usize>,
}

impl PartialEq for HeaderTree {
    fn eq(&self, other: &Self) -> bool {
        self.roots == other.roots
    }
}

impl Eq for HeaderTree {}

impl HeaderTree {
    /// Validates labels and sibling uniqueness and builds the path index.
    pub fn new(roots: Vec<HeaderNode>) -> Result<Self, TableError> {
        if roots.is_empty() {
            return Err(TableError::Schema("header tree has no roots".into()));
        }
        check_siblings(&roots, &HeaderPath(Vec::new()))?;
        let roots: Vec<HeaderNode> = roots.into_iter().map(normalize_node).collect();
        let depth = roots.iter().map(HeaderNode::depth).max().unwrap_or(1);
        let mut nodes = Vec::new();
        let mut cursor = 0;
        for r in &roots {
            flatten(r, &HeaderPath(Vec::new()), 0, &mut cursor, &mut nodes);
        }
        let leaves = nodes.iter().filter(|n| n.is_leaf).map(|n| n.path.clone()).collect();
        let path_index = nodes.iter().enumerate().map(|(i, n)| (n.path.clone(), i)).collect();
        Ok(HeaderTree { roots, depth, nodes, leaves, path_index })
    }

    pub fn roots(&self) -> &[HeaderNode] {
        &self.roots
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// All nodes in pre-order.
    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn node(&self, path: &HeaderPath) -> Option<&NodeInfo> {
        self.path_index.get(path).map(|&i| &self.nodes[i])
    }

    /// Index of a leaf path along its grid axis.
    pub fn leaf_index(&self, path: &HeaderPath) -> Result<usize, TableError> {
        match self.node(path) {
            None => Err(TableError::PathNotFound(path.clone())),
            Some(n) if !n.is_leaf => Err(TableError::PathNotLeaf(path.clone())),
            Some(n) => Ok(n.leaf_start),
        }
    }

    pub fn leaf_path(&self, index: usize) -> Option<&HeaderPath> {
        self.leaves.get(index)
    }

    pub fn leaf_paths_slice(&self) -> &[HeaderPath] {
        &self.leaves
    }
}

/// Left-to-right root-to-leaf paths; order matches the grid axis.
pub fn leaf_paths(tree: &HeaderTree) -> Vec<HeaderPath> {
    tree.leaves.clone()
}

fn normalize_node(node: HeaderNode) -> HeaderNode {
    let children: Vec<HeaderNode> = node.children.into_iter().map(normalize_node).collect();
    HeaderNode::branch(node.label.trim(), children)
}

fn check_siblings(nodes: &[HeaderNode], parent: &HeaderPath) -> Result<(), TableError> {
    let mut seen = HashSet::new();
    for n in nodes {
        let label = n.label.trim();
        if label.is_empty() {
            return Err(TableError::Schema(format!("empty header label under {}", display_parent(parent))));
        }
        if !seen.insert(label) {
            return Err(TableError::DuplicateSibling {
                parent: display_parent(parent),
                label: label.to_string(),
            });
        }
        check_siblings(&n.children, &parent.child(label))?;
    }
    Ok(())
}

fn display_parent(p: &HeaderPath) -> String {
    if p.is_empty() {
        "<root>".to_string()
    } else {
        p.to_string()
    }
}

fn flatten(node: &HeaderNode, parent: &HeaderPath, level: usize, cursor: &mut usize, out: &mut Vec<NodeInfo>) {
    let path = parent.child(&node.label);
    let slot = out.len();
    out.push(NodeInfo {
        path: path.clone(),
        level,
        leaf_start: *cursor,
        leaf_end: *cursor,
        is_leaf: node.is_leaf(),
    });
    if node.is_leaf() {
        *cursor += 1;
    } else {
        for c in &node.children {
            flatten(c, &path, level + 1, cursor, out);
        }
    }
    out[slot].leaf_end = *cursor;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellValue {
    pub raw: String,
    pub numeric: Option<Decimal>,
}

impl CellValue {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let numeric = parse_numeric(&raw);
        CellValue { raw, numeric }
    }

    /// Answer-facing rendering: canonical decimal for numbers, trimmed raw text
    /// otherwise.
    pub fn display(&self) -> String {
        match self.numeric {
            Some(v) => crate::numeric::format_decimal(v),
            None => self.raw.trim().to_string(),
        }
    }
}

/// Axis-wise leaf path to grid index lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridIndex {
    pub col_path_to_index: HashMap<HeaderPath, usize>,
    pub row_path_to_index: HashMap<HeaderPath, usize>,
}

impl GridIndex {
    fn build(cols: &HeaderTree, rows: &HeaderTree) -> Self {
        let index = |t: &HeaderTree| t.leaves.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        GridIndex { col_path_to_index: index(cols), row_path_to_index: index(rows) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Col,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSpec {
    pub table_id: String,
    pub title: Option<String>,
    pub col_tree: HeaderTree,
    pub row_tree: HeaderTree,
    pub cells: Vec<Vec<CellValue>>,
    index: GridIndex,
}

impl TableSpec {
    pub fn new(
        table_id: impl Into<String>,
        title: Option<String>,
        col_tree: HeaderTree,
        row_tree: HeaderTree,
        cells: Vec<Vec<CellValue>>,
    ) -> Result<Self, TableError> {
        let table_id = table_id.into();
        if table_id.trim().is_empty() {
            return Err(TableError::Schema("table_id is empty".into()));
        }
        let (n_rows, n_cols) = (row_tree.leaf_count(), col_tree.leaf_count());
        if cells.len() != n_rows {
            return Err(TableError::DimensionMismatch(format!(
                "grid has {} rows but the row tree has {} leaves",
                cells.len(),
                n_rows
            )));
        }
        if let Some((i, row)) = cells.iter().enumerate().find(|(_, r)| r.len() != n_cols) {
            return Err(TableError::DimensionMismatch(format!(
                "grid row {i} has {} cells but the column tree has {} leaves",
                row.len(),
                n_cols
            )));
        }
        let index = GridIndex::build(&col_tree, &row_tree);
        let title = title.filter(|t| !t.trim().is_empty());
        Ok(TableSpec { table_id, title, col_tree, row_tree, cells, index })
    }

    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_tree.leaf_count()
    }

    pub fn index(&self) -> &GridIndex {
        &self.index
    }

    pub fn tree(&self, axis: Axis) -> &HeaderTree {
        match axis {
            Axis::Row => &self.row_tree,
            Axis::Col => &self.col_tree,
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&CellValue> {
        self.cells.get(row).and_then(|r| r.get(col))
    }

    pub fn to_document(&self) -> TableDocument {
        fn doc(n: &HeaderNode) -> HeaderDocument {
            HeaderDocument {
                label: n.label.clone(),
                children: (!n.children.is_empty()).then(|| n.children.iter().map(doc).collect()),
            }
        }
        TableDocument {
            table_id: self.table_id.clone(),
            title: self.title.clone(),
            columns: self.col_tree.roots.iter().map(doc).collect(),
            rows: self.row_tree.roots.iter().map(doc).collect(),
            cells: self.cells.iter().map(|r| r.iter().map(|c| c.raw.clone()).collect()).collect(),
        }
    }
}

/// Returns the cell addressed by two leaf paths.
pub fn grid_lookup<'a>(spec: &'a TableSpec, row_path: &HeaderPath, col_path: &HeaderPath) -> Result<&'a CellValue, TableError> {
    let r = spec.row_tree.leaf_index(row_path)?;
    let c = spec.col_tree.leaf_index(col_path)?;
    debug_assert_eq!(spec.index.row_path_to_index.get(row_path), Some(&r));
    Ok(&spec.cells[r][c])
}

/// On-disk table document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableDocument {
    pub table_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub columns: Vec<HeaderDocument>,
    pub rows: Vec<HeaderDocument>,
    pub cells: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeaderDocument {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub children: Option<Vec<HeaderDocument>>,
}

impl HeaderDocument {
    fn to_node(&self) -> HeaderNode {
        let children = self.children.as_deref().unwrap_or_default().iter().map(HeaderDocument::to_node).collect();
        HeaderNode::branch(self.label.clone(), children)
    }
}

impl TableDocument {
    pub fn into_spec(self) -> Result<TableSpec, TableError> {
        let cols = HeaderTree::new(self.columns.iter().map(HeaderDocument::to_node).collect())
            .map_err(|e| prefix(e, "columns"))?;
        let rows = HeaderTree::new(self.rows.iter().map(HeaderDocument::to_node).collect())
            .map_err(|e| prefix(e, "rows"))?;
        let cells = self.cells.into_iter().map(|r| r.into_iter().map(CellValue::new).collect()).collect();
        TableSpec::new(self.table_id, self.title, cols, rows, cells)
    }
}

fn prefix(e: TableError, axis: &str) -> TableError {
    match e {
        TableError::Schema(m) => TableError::Schema(format!("{axis}: {m}")),
        other => other,
    }
}

/// Validates a structured document into a [`TableSpec`].
pub fn load_spec(document: &serde_json::Value) -> Result<TableSpec, TableError> {
    let doc: TableDocument =
        serde_json::from_value(document.clone()).map_err(|e| TableError::Schema(e.to_string()))?;
    doc.into_spec()
}

/// Parses table JSON text; schema errors carry the line and column.
pub fn load_spec_str(text: &str) -> Result<TableSpec, TableError> {
    let doc: TableDocument = serde_json::from_str(text)
        .map_err(|e| TableError::Schema(format!("line {} column {}: {e}", e.line(), e.column())))?;
    doc.into_spec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{fixture_a, fixture_a_json};
    use serde_json::json;

    fn p(s: &str) -> HeaderPath {
        HeaderPath::new(s.split('>'))
    }

    #[test]
    fn fixture_a_shape() {
        let spec = fixture_a();
        assert_eq!(spec.n_rows(), 2);
        assert_eq!(spec.n_cols(), 4);
        assert_eq!(spec.col_tree.depth(), 2);
        assert_eq!(spec.row_tree.depth(), 1);
        assert_eq!(spec.col_tree.roots()[0].leaf_span, 2);
    }

    #[test]
    fn fixture_a_leaf_paths() {
        let spec = fixture_a();
        let got: Vec<String> = leaf_paths(&spec.col_tree).iter().map(ToString::to_string).collect();
        assert_eq!(got, ["Revenue>Q1", "Revenue>Q2", "Cost>Q1", "Cost>Q2"]);
    }

    #[test]
    fn small_trees() {
        let t = HeaderTree::new(vec![HeaderNode::leaf("2020"), HeaderNode::leaf("2021")]).unwrap();
        assert_eq!(leaf_paths(&t), vec![p("2020"), p("2021")]);
        let t = HeaderTree::new(vec![HeaderNode::branch("Root", vec![HeaderNode::leaf("C")])]).unwrap();
        assert_eq!(leaf_paths(&t), vec![p("Root>C")]);
        assert_eq!(t.depth(), 2);
    }

    #[test]
    fn lookups() {
        let spec = fixture_a();
        assert_eq!(grid_lookup(&spec, &p("2020"), &p("Revenue>Q1")).unwrap().raw, "10");
        assert_eq!(grid_lookup(&spec, &p("2021"), &p("Cost>Q2")).unwrap().raw, "16");
        assert_eq!(
            grid_lookup(&spec, &p("2019"), &p("Cost>Q2")),
            Err(TableError::PathNotFound(p("2019")))
        );
        assert_eq!(
            grid_lookup(&spec, &p("2020"), &p("Cost")),
            Err(TableError::PathNotLeaf(p("Cost")))
        );
    }

    #[test]
    fn dimension_mismatch() {
        let doc = json!({
            "table_id": "t",
            "columns": [{"label": "A"}, {"label": "B"}, {"label": "C"}, {"label": "D"}],
            "rows": [{"label": "r1"}, {"label": "r2"}],
            "cells": [["1", "2", "3"], ["4", "5", "6"]]
        });
        assert!(matches!(load_spec(&doc), Err(TableError::DimensionMismatch(_))));
    }

    #[test]
    fn single_cell() {
        let doc = json!({"table_id": "one", "columns": [{"label": "A"}], "rows": [{"label": "r"}], "cells": [["x"]]});
        let spec = load_spec(&doc).unwrap();
        assert_eq!((spec.n_rows(), spec.n_cols()), (1, 1));
        assert_eq!((spec.row_tree.depth(), spec.col_tree.depth()), (1, 1));
    }

    #[test]
    fn duplicate_siblings_rejected() {
        let doc = json!({
            "table_id": "t",
            "columns": [{"label": "A", "children": [{"label": "x"}, {"label": " x "}]}],
            "rows": [{"label": "r"}],
            "cells": [["1", "2"]]
        });
        assert!(matches!(load_spec(&doc), Err(TableError::DuplicateSibling { .. })));
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(load_spec(&json!({"table_id": "t"})), Err(TableError::Schema(_))));
        let blank = json!({"table_id": "t", "columns": [{"label": "  "}], "rows": [{"label": "r"}], "cells": [["1"]]});
        assert!(matches!(load_spec(&blank), Err(TableError::Schema(_))));
        let err = load_spec_str("{\n  \"table_id\": 3\n}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn document_round_trip() {
        let spec = load_spec_str(fixture_a_json()).unwrap();
        let again = load_spec(&serde_json::to_value(spec.to_document()).unwrap()).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn node_ranges() {
        let spec = fixture_a();
        let cost = spec.col_tree.node(&p("Cost")).unwrap();
        assert_eq!((cost.leaf_start, cost.leaf_end, cost.level), (2, 4, 0));
        let q2 = spec.col_tree.node(&p("Cost>Q2")).unwrap();
        assert_eq!((q2.leaf_start, q2.leaf_end, q2.level, q2.is_leaf), (3, 4, 1, true));
    }
}
