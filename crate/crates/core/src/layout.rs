//! Pixel layout of a table and the region map that records every cell and
//! header box.
//!
//! Geometry conventions:
//! - origin top-left, integer pixels;
//! - a box spans its grid lines inclusively, so neighbours share coordinates;
//! - the column-header band occupies `head_h * col_depth` rows at the top and
//!   the row-header stub occupies `stub_w * row_depth` columns at the left;
//! - a leaf header shallower than its tree extends down (or right) to the
//!   data area;
//! - the top-left stub corner is drawn but is not a region.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{Axis, HeaderPath, HeaderTree, TableSpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("invalid layout metrics: {0}")]
    MetricsInvalid(String),
    #[error("no {label} region for {grid}")]
    RegionNotFound { label: LabelType, grid: GridRef },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl BBox {
    pub const fn new_unchecked(x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Option<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.is_valid().then_some(b)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 >= 0 && self.y1 >= 0 && self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn width(&self) -> i64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> i64 {
        self.width().max(0) * self.height().max(0)
    }

    pub fn within(&self, w: i64, h: i64) -> bool {
        self.x1 >= 0 && self.y1 >= 0 && self.x2 <= w && self.y2 <= h
    }

    pub fn as_array(&self) -> [i64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x1, self.y1, self.x2, self.y2)
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[i64; 4]>::deserialize(d)?;
        BBox::new(x1, y1, x2, y2)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid box [{x1},{y1},{x2},{y2}]")))
    }
}

/// The five region label types a grounding output may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelType {
    Column,
    Row,
    Cell,
    #[serde(rename = "colhead")]
    ColHead,
    #[serde(rename = "rowhead")]
    RowHead,
}

impl LabelType {
    pub const ALL: [LabelType; 5] =
        [LabelType::Column, LabelType::Row, LabelType::Cell, LabelType::ColHead, LabelType::RowHead];

    pub fn as_str(&self) -> &'static str {
        match self {
            LabelType::Column => "column",
            LabelType::Row => "row",
            LabelType::Cell => "cell",
            LabelType::ColHead => "colhead",
            LabelType::RowHead => "rowhead",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        LabelType::ALL.into_iter().find(|l| l.as_str() == name)
    }
}

impl fmt::Display for LabelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grid coordinates of a region: indices for data strips and cells, a header
/// path for header regions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridRef {
    Cell { row: usize, col: usize },
    Row { row: usize },
    Column { col: usize },
    Header { path: HeaderPath },
}

impl fmt::Display for GridRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridRef::Cell { row, col } => write!(f, "row {row}, col {col}"),
            GridRef::Row { row } => write!(f, "row {row}"),
            GridRef::Column { col } => write!(f, "col {col}"),
            GridRef::Header { path } => write!(f, "path {path}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub label: LabelType,
    pub bbox: BBox,
    pub grid: GridRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "RegionMapFile", into = "RegionMapFile")]
pub struct RegionMap {
    pub image_w: i64,
    pub image_h: i64,
    regions: Vec<Region>,
    index: HashMap<(LabelType, GridRef), usize>,
}

#[derive(Serialize, Deserialize)]
struct RegionMapFile {
    image_w: i64,
    image_h: i64,
    regions: Vec<Region>,
}

impl From<RegionMapFile> for RegionMap {
    fn from(f: RegionMapFile) -> Self {
        RegionMap::from_regions(f.image_w, f.image_h, f.regions)
    }
}

impl From<RegionMap> for RegionMapFile {
    fn from(m: RegionMap) -> Self {
        RegionMapFile { image_w: m.image_w, image_h: m.image_h, regions: m.regions }
    }
}

impl PartialEq for RegionMap {
    fn eq(&self, other: &Self) -> bool {
        self.image_w == other.image_w && self.image_h == other.image_h && self.regions == other.regions
    }
}

impl RegionMap {
    pub fn from_regions(image_w: i64, image_h: i64, regions: Vec<Region>) -> Self {
        let index = regions.iter().enumerate().map(|(i, r)| ((r.label, r.grid.clone()), i)).collect();
        RegionMap { image_w, image_h, regions, index }
    }

    /// Regions in emission order: column headers, row headers (both
    /// pre-order), column strips, row strips, then cells row-major.
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn get(&self, label: LabelType, grid: &GridRef) -> Option<&Region> {
        self.index.get(&(label, grid.clone())).map(|&i| &self.regions[i])
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&Region> {
        self.get(LabelType::Cell, &GridRef::Cell { row, col })
    }

    pub fn header(&self, axis: Axis, path: &HeaderPath) -> Option<&Region> {
        let label = match axis {
            Axis::Row => LabelType::RowHead,
            Axis::Col => LabelType::ColHead,
        };
        self.get(label, &GridRef::Header { path: path.clone() })
    }

    /// Finds the region whose box is exactly `bbox`, preferring cells.
    pub fn region_at(&self, bbox: &BBox) -> Option<&Region> {
        let mut hits = self.regions.iter().filter(|r| r.bbox == *bbox);
        let first = hits.next()?;
        if first.label == LabelType::Cell {
            return Some(first);
        }
        Some(hits.find(|r| r.label == LabelType::Cell).unwrap_or(first))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("region map serializes")
    }
}

/// Looks up the unique region with the given label and grid reference.
pub fn region_of<'a>(map: &'a RegionMap, label: LabelType, grid: &GridRef) -> Result<&'a Region, LayoutError> {
    map.get(label, grid).ok_or_else(|| LayoutError::RegionNotFound { label, grid: grid.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sizing {
    /// Uniform column width and row height.
    Fixed,
    /// Column width fitted to the widest text in the column plus padding,
    /// with a 60 px floor.
    ContentFitted { padding: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutMetrics {
    pub cell_w: i64,
    pub cell_h: i64,
    /// Width of one row-header level.
    pub stub_w: i64,
    /// Height of one column-header level.
    pub head_h: i64,
    pub border: i64,
    pub font_size: i64,
    pub sizing: Sizing,
}

impl Default for LayoutMetrics {
    fn default() -> Self {
        LayoutMetrics { cell_w: 120, cell_h: 40, stub_w: 160, head_h: 40, border: 1, font_size: 14, sizing: Sizing::Fixed }
    }
}

pub const FITTED_MIN_WIDTH: i64 = 60;

impl LayoutMetrics {
    fn validate(&self) -> Result<(), LayoutError> {
        let fields = [
            ("cell_w", self.cell_w),
            ("cell_h", self.cell_h),
            ("stub_w", self.stub_w),
            ("head_h", self.head_h),
            ("border", self.border),
            ("font_size", self.font_size),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| *v <= 0) {
            return Err(LayoutError::MetricsInvalid(format!("{name} must be positive, got {v}")));
        }
        if let Sizing::ContentFitted { padding } = self.sizing {
            if padding < 0 {
                return Err(LayoutError::MetricsInvalid(format!("padding must be non-negative, got {padding}")));
            }
        }
        Ok(())
    }

    /// Estimated advance width of a text run in the monospace face.
    pub fn text_width(&self, text: &str) -> i64 {
        let advance = (self.font_size * 6 + 9) / 10;
        text.chars().count() as i64 * advance
    }
}

/// Lays out `spec` and records one region per cell, header node and data
/// strip.
pub fn compute_layout(spec: &TableSpec, metrics: &LayoutMetrics) -> Result<RegionMap, LayoutError> {
    metrics.validate()?;
    let row_depth = spec.row_tree.depth() as i64;
    let col_depth = spec.col_tree.depth() as i64;
    let data_x = metrics.stub_w * row_depth;
    let data_y = metrics.head_h * col_depth;

    let widths = column_widths(spec, metrics);
    let mut xs = Vec::with_capacity(widths.len() + 1);
    xs.push(data_x);
    for w in &widths {
        xs.push(xs.last().unwrap() + w);
    }
    let ys: Vec<i64> = (0..=spec.n_rows() as i64).map(|r| data_y + r * metrics.cell_h).collect();
    let image_w = *xs.last().unwrap();
    let image_h = *ys.last().unwrap();

    let mut regions = Vec::new();
    header_regions(&spec.col_tree, Axis::Col, metrics, &xs, &mut regions);
    header_regions(&spec.row_tree, Axis::Row, metrics, &ys, &mut regions);
    for c in 0..spec.n_cols() {
        regions.push(Region {
            id: format!("column/{c}"),
            label: LabelType::Column,
            bbox: BBox::new_unchecked(xs[c], data_y, xs[c + 1], image_h),
            grid: GridRef::Column { col: c },
        });
    }
    for r in 0..spec.n_rows() {
        regions.push(Region {
            id: format!("row/{r}"),
            label: LabelType::Row,
            bbox: BBox::new_unchecked(data_x, ys[r], image_w, ys[r + 1]),
            grid: GridRef::Row { row: r },
        });
    }
    for r in 0..spec.n_rows() {
        for c in 0..spec.n_cols() {
            regions.push(Region {
                id: format!("cell/{r}/{c}"),
                label: LabelType::Cell,
                bbox: BBox::new_unchecked(xs[c], ys[r], xs[c + 1], ys[r + 1]),
                grid: GridRef::Cell { row: r, col: c },
            });
        }
    }
    Ok(RegionMap::from_regions(image_w, image_h, regions))
}

fn column_widths(spec: &TableSpec, metrics: &LayoutMetrics) -> Vec<i64> {
    match metrics.sizing {
        Sizing::Fixed => vec![metrics.cell_w; spec.n_cols()],
        Sizing::ContentFitted { padding } => (0..spec.n_cols())
            .map(|c| {
                let head = spec.col_tree.leaf_path(c).and_then(|p| p.last()).unwrap_or("");
                let widest = spec
                    .cells
                    .iter()
                    .map(|row| metrics.text_width(row[c].raw.trim()))
                    .chain(std::iter::once(metrics.text_width(head)))
                    .max()
                    .unwrap_or(0);
                (widest + padding).max(FITTED_MIN_WIDTH)
            })
            .collect(),
    }
}

/// `cuts` holds the data-area grid lines along the header's spanning axis.
fn header_regions(tree: &HeaderTree, axis: Axis, m: &LayoutMetrics, cuts: &[i64], out: &mut Vec<Region>) {
    let depth = tree.depth() as i64;
    let (label, prefix, band) = match axis {
        Axis::Col => (LabelType::ColHead, "colhead", m.head_h),
        Axis::Row => (LabelType::RowHead, "rowhead", m.stub_w),
    };
    for (i, node) in tree.nodes().iter().enumerate() {
        let level = node.level as i64;
        let near = level * band;
        let far = if node.is_leaf { depth * band } else { (level + 1) * band };
        let (lo, hi) = (cuts[node.leaf_start], cuts[node.leaf_end]);
        let bbox = match axis {
            Axis::Col => BBox::new_unchecked(lo, near, hi, far),
            Axis::Row => BBox::new_unchecked(near, lo, far, hi),
        };
        out.push(Region { id: format!("{prefix}/{i}"), label, bbox, grid: GridRef::Header { path: node.path.clone() } });
    }
}
