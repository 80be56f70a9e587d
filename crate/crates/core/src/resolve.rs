//! Deterministic tag → bounding-box resolution against a rendered table.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{BBox, LabelType, Region, RegionMap};
use crate::table::{Axis, HeaderPath, HeaderTree, NodeInfo, TableSpec};
use crate::tag::SemanticTag;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResolveError {
    #[error("path not found: {0}")]
    PathNotFound(HeaderPath),
    #[error("ambiguous path {path}: matches {}", matches.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    AmbiguousPath { path: HeaderPath, matches: Vec<HeaderPath> },
    #[error("path {0} addresses an internal header, not a leaf")]
    NotLeaf(HeaderPath),
    #[error("cell ({row}, {col}) is outside the grid")]
    IndexOutOfRange { row: usize, col: usize },
    #[error("region map has no region for {0}")]
    MissingRegion(String),
    #[error("tag {index}: {source}")]
    InTag { index: usize, source: Box<ResolveError> },
}

/// Regions a single tag resolves to, in reading order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialEvidence {
    pub tag: SemanticTag,
    pub regions: Vec<Region>,
    pub bboxes_px: Vec<BBox>,
}

/// One distinct box of an evidence set together with the tag that first
/// introduced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBox {
    pub tag: SemanticTag,
    pub label: LabelType,
    pub bbox_px: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialEvidenceSet {
    pub items: Vec<SpatialEvidence>,
    pub total_boxes: usize,
}

impl SpatialEvidenceSet {
    /// Distinct boxes in tag order, then reading order within a tag.
    pub fn distinct(&self) -> Vec<EvidenceBox> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for item in &self.items {
            for r in &item.regions {
                if seen.insert(r.bbox) {
                    out.push(EvidenceBox { tag: item.tag.clone(), label: r.label, bbox_px: r.bbox });
                }
            }
        }
        out
    }
}

/// Resolves a possibly abbreviated path to the unique full node path.
///
/// An exact root path wins; otherwise the path must be the suffix of exactly
/// one candidate. `leaves_only` restricts candidates to leaves.
fn resolve_node<'t>(path: &HeaderPath, tree: &'t HeaderTree, leaves_only: bool) -> Result<&'t NodeInfo, ResolveError> {
    if let Some(node) = tree.node(path) {
        if leaves_only && !node.is_leaf {
            return Err(ResolveError::NotLeaf(path.clone()));
        }
        return Ok(node);
    }
    let matches: Vec<&NodeInfo> = tree
        .nodes()
        .iter()
        .filter(|n| (!leaves_only || n.is_leaf) && n.path.ends_with(path.segments()))
        .collect();
    match matches.as_slice() {
        [one] => Ok(one),
        [] => {
            if leaves_only && tree.nodes().iter().any(|n| n.path.ends_with(path.segments())) {
                Err(ResolveError::NotLeaf(path.clone()))
            } else {
                Err(ResolveError::PathNotFound(path.clone()))
            }
        }
        many => Err(ResolveError::AmbiguousPath {
            path: path.clone(),
            matches: many.iter().map(|n| n.path.clone()).collect(),
        }),
    }
}

/// Full leaf path for a unique suffix of one.
pub fn resolve_suffix(path: &HeaderPath, tree: &HeaderTree) -> Result<HeaderPath, ResolveError> {
    resolve_node(path, tree, true).map(|n| n.path.clone())
}

fn need(region: Option<&Region>, what: impl FnOnce() -> String) -> Result<Region, ResolveError> {
    region.cloned().ok_or_else(|| ResolveError::MissingRegion(what()))
}

pub fn resolve_tag(tag: &SemanticTag, spec: &TableSpec, map: &RegionMap) -> Result<SpatialEvidence, ResolveError> {
    let regions = match tag {
        SemanticTag::CellIntersect { col, row } => {
            let c = resolve_node(col, &spec.col_tree, true)?.leaf_start;
            let r = resolve_node(row, &spec.row_tree, true)?.leaf_start;
            vec![need(map.cell(r, c), || format!("cell {r},{c}"))?]
        }
        SemanticTag::RowExtract(path) => {
            let node = resolve_node(path, &spec.row_tree, true)?;
            let r = node.leaf_start;
            let mut out = vec![need(map.header(Axis::Row, &node.path), || format!("rowhead {}", node.path))?];
            for c in 0..spec.n_cols() {
                out.push(need(map.cell(r, c), || format!("cell {r},{c}"))?);
            }
            out
        }
        SemanticTag::ColExtract(path) => {
            let node = resolve_node(path, &spec.col_tree, true)?;
            let c = node.leaf_start;
            let mut out = vec![need(map.header(Axis::Col, &node.path), || format!("colhead {}", node.path))?];
            for r in 0..spec.n_rows() {
                out.push(need(map.cell(r, c), || format!("cell {r},{c}"))?);
            }
            out
        }
        SemanticTag::ColHeadRef(path) => {
            let node = resolve_node(path, &spec.col_tree, false)?;
            vec![need(map.header(Axis::Col, &node.path), || format!("colhead {}", node.path))?]
        }
        SemanticTag::RowHeadRef(path) => {
            let node = resolve_node(path, &spec.row_tree, false)?;
            vec![need(map.header(Axis::Row, &node.path), || format!("rowhead {}", node.path))?]
        }
    };
    let bboxes_px = regions.iter().map(|r| r.bbox).collect();
    Ok(SpatialEvidence { tag: tag.clone(), regions, bboxes_px })
}

/// Boxes of the addressed cells, input order preserved.
pub fn resolve_legacy(cells: &[(usize, usize)], map: &RegionMap) -> Result<Vec<BBox>, ResolveError> {
    cells
        .iter()
        .map(|&(row, col)| map.cell(row, col).map(|r| r.bbox).ok_or(ResolveError::IndexOutOfRange { row, col }))
        .collect()
}

pub fn resolve_evidence_set(tags: &[SemanticTag], spec: &TableSpec, map: &RegionMap) -> Result<SpatialEvidenceSet, ResolveError> {
    let items = tags
        .iter()
        .enumerate()
        .map(|(index, t)| {
            resolve_tag(t, spec, map).map_err(|e| ResolveError::InTag { index, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let total_boxes = items.iter().flat_map(|i| i.bboxes_px.iter()).collect::<HashSet<_>>().len();
    Ok(SpatialEvidenceSet { items, total_boxes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_a;
    use crate::layout::{compute_layout, LayoutMetrics};
    use crate::tag::parse_tag;

    fn setup() -> (TableSpec, RegionMap) {
        let spec = fixture_a();
        let map = compute_layout(&spec, &LayoutMetrics::default()).unwrap();
        (spec, map)
    }

    fn tags(ts: &[&str]) -> Vec<SemanticTag> {
        ts.iter().map(|t| parse_tag(t).unwrap()).collect()
    }

    fn p(s: &str) -> HeaderPath {
        HeaderPath::new(s.split('>'))
    }

    #[test]
    fn cell_tag() {
        let (spec, map) = setup();
        let ev = resolve_tag(&parse_tag("cell:Revenue>Q1@2020").unwrap(), &spec, &map).unwrap();
        assert_eq!(ev.bboxes_px, vec![BBox::new_unchecked(160, 80, 280, 120)]);
    }

    #[test]
    fn row_tag_includes_header() {
        let (spec, map) = setup();
        let ev = resolve_tag(&parse_tag("row:2021").unwrap(), &spec, &map).unwrap();
        assert_eq!(ev.regions.len(), 5);
        assert_eq!(ev.regions[0].label, LabelType::RowHead);
        for r in &ev.regions[1..] {
            assert_eq!((r.bbox.y1, r.bbox.y2), (120, 160));
        }
        let xs: Vec<i64> = ev.regions[1..].iter().map(|r| r.bbox.x1).collect();
        assert_eq!(xs, [160, 280, 400, 520]);
    }

    #[test]
    fn ambiguous_suffix() {
        let (spec, map) = setup();
        let e = resolve_tag(&parse_tag("cell:Q1@2020").unwrap(), &spec, &map).unwrap_err();
        assert!(matches!(e, ResolveError::AmbiguousPath { .. }), "{e}");
    }

    #[test]
    fn suffixes() {
        let spec = fixture_a();
        assert_eq!(resolve_suffix(&p("Revenue>Q2"), &spec.col_tree).unwrap(), p("Revenue>Q2"));
        assert!(matches!(resolve_suffix(&p("Q1"), &spec.col_tree), Err(ResolveError::AmbiguousPath { .. })));
        assert_eq!(resolve_suffix(&p("Cost>Q1"), &spec.col_tree).unwrap(), p("Cost>Q1"));
        assert!(matches!(resolve_suffix(&p("Q3"), &spec.col_tree), Err(ResolveError::PathNotFound(_))));
        assert!(matches!(resolve_suffix(&p("Cost"), &spec.col_tree), Err(ResolveError::NotLeaf(_))));
    }

    #[test]
    fn not_leaf_and_not_found() {
        let (spec, map) = setup();
        let e = resolve_tag(&parse_tag("cell:Revenue@2020").unwrap(), &spec, &map).unwrap_err();
        assert_eq!(e, ResolveError::NotLeaf(p("Revenue")));
        let e = resolve_tag(&parse_tag("row:2019").unwrap(), &spec, &map).unwrap_err();
        assert_eq!(e, ResolveError::PathNotFound(p("2019")));
        let ev = resolve_tag(&parse_tag("colhead:Revenue").unwrap(), &spec, &map).unwrap();
        assert_eq!(ev.bboxes_px, vec![BBox::new_unchecked(160, 0, 400, 40)]);
    }

    #[test]
    fn legacy_indices() {
        let (_, map) = setup();
        assert_eq!(resolve_legacy(&[(0, 0)], &map).unwrap(), vec![BBox::new_unchecked(160, 80, 280, 120)]);
        assert_eq!(resolve_legacy(&[], &map).unwrap(), vec![]);
        assert_eq!(resolve_legacy(&[(5, 0)], &map), Err(ResolveError::IndexOutOfRange { row: 5, col: 0 }));
    }

    #[test]
    fn evidence_set_dedup() {
        let (spec, map) = setup();
        let set = resolve_evidence_set(&tags(&["row:2020", "cell:Revenue>Q1@2020"]), &spec, &map).unwrap();
        assert_eq!(set.total_boxes, 5);
        let set = resolve_evidence_set(&tags(&["cell:Revenue>Q1@2020", "cell:Revenue>Q1@2020"]), &spec, &map).unwrap();
        assert_eq!(set.total_boxes, 1);
        let set = resolve_evidence_set(&tags(&["row:2020", "col:Cost>Q1"]), &spec, &map).unwrap();
        assert_eq!(set.total_boxes, 7);
        assert_eq!(set.distinct().len(), 7);
        assert_eq!(set.distinct()[5].tag.to_string(), "col:Cost>Q1");
    }

    #[test]
    fn evidence_error_names_tag() {
        let (spec, map) = setup();
        let e = resolve_evidence_set(&tags(&["row:2020", "row:1999"]), &spec, &map).unwrap_err();
        assert!(matches!(e, ResolveError::InTag { index: 1, .. }), "{e}");
    }
}
