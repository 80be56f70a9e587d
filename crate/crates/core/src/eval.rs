//! Evaluation primitives: 1000-level coordinate normalization, the stage-1
//! grounding output grammar, IoU and box matching, exact-match scoring and
//! accuracy aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forge::{Level, TaskCategory};
use crate::layout::{BBox, LabelType};
use crate::numeric::{format_decimal, parse_numeric};

pub const NORM_MAX: i64 = 999;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("box {bbox} lies outside a {w}x{h} image")]
    OutOfBounds { bbox: BBox, w: i64, h: i64 },
    #[error("no valid grounding lines in model output")]
    NoValidLines { reason: String, rejected: Vec<RejectedLine> },
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NormBBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl NormBBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Option<Self> {
        let ok = (0..=NORM_MAX).contains(&x1)
            && (0..=NORM_MAX).contains(&y1)
            && (x1..=NORM_MAX).contains(&x2)
            && (y1..=NORM_MAX).contains(&y2);
        ok.then_some(NormBBox { x1, y1, x2, y2 })
    }

    pub fn as_array(&self) -> [i64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl Serialize for NormBBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for NormBBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[i64; 4]>::deserialize(d)?;
        NormBBox::new(x1, y1, x2, y2)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid normalized box [{x1},{y1},{x2},{y2}]")))
    }
}

impl fmt::Display for NormBBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})({},{})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// round_half_up(num / den) for non-negative operands.
fn div_round_half_up(num: i64, den: i64) -> i64 {
    (2 * num + den).div_euclid(2 * den)
}

pub fn normalize_coord(v: i64, dim: i64) -> i64 {
    div_round_half_up(v * NORM_MAX, dim).clamp(0, NORM_MAX)
}

pub fn denormalize_coord(n: i64, dim: i64) -> i64 {
    div_round_half_up(n * dim, NORM_MAX)
}

/// Maps a pixel box to the [0, 999] grid, x against width and y against
/// height, rounding half up.
pub fn normalize_bbox(b: &BBox, image_w: i64, image_h: i64) -> Result<NormBBox, EvalError> {
    if image_w <= 0 || image_h <= 0 || !b.within(image_w, image_h) || b.x1 > b.x2 || b.y1 > b.y2 {
        return Err(EvalError::OutOfBounds { bbox: *b, w: image_w, h: image_h });
    }
    Ok(NormBBox {
        x1: normalize_coord(b.x1, image_w),
        y1: normalize_coord(b.y1, image_h),
        x2: normalize_coord(b.x2, image_w),
        y2: normalize_coord(b.y2, image_h),
    })
}

/// Pixel coordinates for a normalized box; may be degenerate for tiny images.
pub fn denormalize_bbox(n: &NormBBox, image_w: i64, image_h: i64) -> BBox {
    BBox::new_unchecked(
        denormalize_coord(n.x1, image_w),
        denormalize_coord(n.y1, image_h),
        denormalize_coord(n.x2, image_w),
        denormalize_coord(n.y2, image_h),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundingLine {
    pub label: LabelType,
    pub bbox: NormBBox,
}

impl fmt::Display for GroundingLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.label, self.bbox)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line_no: usize,
    pub text: String,
    pub why: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingOutput {
    pub reason: String,
    pub lines: Vec<GroundingLine>,
    pub rejected: Vec<RejectedLine>,
}

fn line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*\[\s*([^\]]*?)\s*\]\s*\(\s*(\d{1,9})\s*,\s*(\d{1,9})\s*\)\s*\(\s*(\d{1,9})\s*,\s*(\d{1,9})\s*\)\s*$")
            .expect("static regex")
    })
}

/// Parses one `[label] (x1,y1)(x2,y2)` line.
pub fn parse_grounding_line(line: &str) -> Result<GroundingLine, String> {
    let caps = line_re().captures(line).ok_or_else(|| "not a grounding line".to_string())?;
    let label = LabelType::from_name(&caps[1]).ok_or_else(|| format!("unknown label {:?}", &caps[1]))?;
    let n = |i: usize| caps[i].parse::<i64>().unwrap_or(i64::MAX);
    let bbox = NormBBox::new(n(2), n(3), n(4), n(5))
        .ok_or_else(|| format!("coordinates outside [0, {NORM_MAX}] or inverted"))?;
    Ok(GroundingLine { label, bbox })
}

/// Splits a stage-1 response into the leading reason text and grounding
/// lines. The reason ends at the first line that opens with `[`; later lines
/// that fail the grammar are reported in `rejected`.
pub fn parse_grounding_output(text: &str) -> Result<GroundingOutput, EvalError> {
    let mut reason_lines = Vec::new();
    let mut lines = Vec::new();
    let mut rejected = Vec::new();
    let mut in_boxes = false;
    for (i, raw) in text.lines().enumerate() {
        let t = raw.trim();
        if !in_boxes && !t.starts_with('[') {
            reason_lines.push(t);
            continue;
        }
        in_boxes = true;
        if t.is_empty() {
            continue;
        }
        match parse_grounding_line(t) {
            Ok(l) => lines.push(l),
            Err(why) => rejected.push(RejectedLine { line_no: i + 1, text: raw.to_string(), why }),
        }
    }
    let reason = reason_lines.join("\n").trim().to_string();
    if lines.is_empty() {
        return Err(EvalError::NoValidLines { reason, rejected });
    }
    Ok(GroundingOutput { reason, lines, rejected })
}

/// Serializes grounding lines one per line, the anchor block format.
pub fn format_grounding_lines(lines: &[GroundingLine]) -> String {
    lines.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

/// Anything with axis-aligned corner coordinates.
pub trait BoxLike {
    fn corners(&self) -> (f64, f64, f64, f64);
}

impl BoxLike for BBox {
    fn corners(&self) -> (f64, f64, f64, f64) {
        (self.x1 as f64, self.y1 as f64, self.x2 as f64, self.y2 as f64)
    }
}

impl BoxLike for NormBBox {
    fn corners(&self) -> (f64, f64, f64, f64) {
        (self.x1 as f64, self.y1 as f64, self.x2 as f64, self.y2 as f64)
    }
}

impl<T: BoxLike> BoxLike for &T {
    fn corners(&self) -> (f64, f64, f64, f64) {
        (*self).corners()
    }
}

/// Intersection over union; degenerate boxes score 0 against everything.
pub fn iou<A: BoxLike, B: BoxLike>(a: &A, b: &B) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let area_a = (ax2 - ax1).max(0.0) * (ay2 - ay1).max(0.0);
    let area_b = (bx2 - bx1).max(0.0) * (by2 - by1).max(0.0);
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
}

impl MatchResult {
    pub fn total_iou(&self) -> f64 {
        self.pairs.iter().map(|p| p.iou).sum()
    }
}

/// One-to-one assignment maximizing total IoU; zero-IoU pairs are dropped.
pub fn match_boxes<A: BoxLike, B: BoxLike>(preds: &[A], gts: &[B]) -> MatchResult {
    let weights: Vec<Vec<f64>> = preds.iter().map(|p| gts.iter().map(|g| iou(p, g)).collect()).collect();
    let assignment = max_weight_assignment(&weights, preds.len(), gts.len());
    let mut pairs: Vec<MatchPair> = assignment
        .into_iter()
        .filter_map(|(p, g)| {
            let w = weights[p][g];
            (w > 0.0).then_some(MatchPair { pred: p, gt: g, iou: w })
        })
        .collect();
    pairs.sort_by_key(|p| p.pred);
    MatchResult { unmatched_pred: preds.len() - pairs.len(), unmatched_gt: gts.len() - pairs.len(), pairs }
}

/// Hungarian algorithm on the square padding of an `rows x cols` weight
/// matrix; returns (row, col) pairs for real rows and columns.
fn max_weight_assignment(w: &[Vec<f64>], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            1.0 - w[i][j]
        } else {
            1.0
        }
    };
    // 1-indexed potentials formulation.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n)
        .filter_map(|j| {
            let (i, c) = (p[j] - 1, j - 1);
            (i < rows && c < cols).then_some((i, c))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUSummary {
    pub pairs: usize,
    pub mean: f64,
    pub median: f64,
    pub frac_ge_50: f64,
    pub frac_ge_75: f64,
    pub frac_ge_90: f64,
}

pub fn iou_summary(pair_ious: &[f64]) -> Result<IoUSummary, EvalError> {
    if pair_ious.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = pair_ious.len();
    let mut sorted = pair_ious.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
    let frac = |t: f64| pair_ious.iter().filter(|&&v| v >= t).count() as f64 / n as f64;
    Ok(IoUSummary {
        pairs: n,
        mean: pair_ious.iter().sum::<f64>() / n as f64,
        median,
        frac_ge_50: frac(0.5),
        frac_ge_75: frac(0.75),
        frac_ge_90: frac(0.9),
    })
}

/// Exact-match canonical form: trimmed, case-folded, internal whitespace
/// collapsed; numbers (thousands separators and a trailing "%" allowed) are
/// rendered as their shortest decimal.
pub fn canonicalize_answer(text: &str) -> String {
    let folded = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    match parse_numeric(&folded) {
        Some(v) => format_decimal(v),
        None => folded,
    }
}

pub fn answers_match(pred: &str, gold: &str) -> bool {
    canonicalize_answer(pred) == canonicalize_answer(gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DensityBucket {
    #[serde(rename = "1-5")]
    Sparse,
    #[serde(rename = "6-10")]
    Medium,
    #[serde(rename = ">10")]
    Dense,
}

impl DensityBucket {
    pub fn of(n_boxes: usize) -> Self {
        match n_boxes {
            0..=5 => DensityBucket::Sparse,
            6..=10 => DensityBucket::Medium,
            _ => DensityBucket::Dense,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResult {
    pub id: String,
    pub category: TaskCategory,
    pub level: Level,
    pub n_gt_boxes: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
        self.accuracy = self.correct as f64 / self.total as f64;
    }

    pub fn merge(&mut self, other: &Tally) {
        self.correct += other.correct;
        self.total += other.total;
        self.accuracy = if self.total == 0 { 0.0 } else { self.correct as f64 / self.total as f64 };
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_category: BTreeMap<TaskCategory, Tally>,
    pub per_level: BTreeMap<Level, Tally>,
    pub density: BTreeMap<DensityBucket, Tally>,
    pub overall: Tally,
}

impl AccuracyReport {
    /// Combines two partial reports; the result equals aggregating the union.
    pub fn merge(&mut self, other: &AccuracyReport) {
        for (k, t) in &other.per_category {
            self.per_category.entry(*k).or_default().merge(t);
        }
        for (k, t) in &other.per_level {
            self.per_level.entry(*k).or_default().merge(t);
        }
        for (k, t) in &other.density {
            self.density.entry(*k).or_default().merge(t);
        }
        self.overall.merge(&other.overall);
    }
}

pub fn aggregate(results: &[ScoredResult]) -> Result<AccuracyReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut report = AccuracyReport::default();
    for r in results {
        report.per_category.entry(r.category).or_default().add(r.correct);
        report.per_level.entry(r.level).or_default().add(r.correct);
        report.density.entry(DensityBucket::of(r.n_gt_boxes)).or_default().add(r.correct);
        report.overall.add(r.correct);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: i64, y1: i64, x2: i64, y2: i64) -> BBox {
        BBox::new_unchecked(x1, y1, x2, y2)
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_coord(0, 640), 0);
        assert_eq!(normalize_coord(640, 640), 999);
        let n = normalize_bbox(&b(160, 80, 280, 120), 640, 160).unwrap();
        assert_eq!(n, NormBBox { x1: 250, y1: 500, x2: 437, y2: 749 });
        assert!(matches!(normalize_bbox(&b(160, 80, 280, 999), 640, 160), Err(EvalError::OutOfBounds { .. })));
    }

    #[test]
    fn denormalization_examples() {
        assert_eq!(denormalize_coord(0, 640), 0);
        assert_eq!(denormalize_coord(999, 640), 640);
        assert_eq!(denormalize_coord(250, 640), 160);
    }

    #[test]
    fn grounding_output_examples() {
        let out = parse_grounding_output("The target cell sits under Revenue.\n[cell] (250,500)(437,749)").unwrap();
        assert_eq!(out.reason, "The target cell sits under Revenue.");
        assert_eq!(out.lines, vec![GroundingLine { label: LabelType::Cell, bbox: NormBBox { x1: 250, y1: 500, x2: 437, y2: 749 } }]);
        assert!(matches!(parse_grounding_output("[blob] (0,0)(10,10)"), Err(EvalError::NoValidLines { .. })));
        assert!(matches!(parse_grounding_output(""), Err(EvalError::NoValidLines { .. })));
    }

    #[test]
    fn grounding_output_tolerates_spacing_and_reports_junk() {
        let text = "why\nmore why\n[ rowhead ]  ( 0 , 10 ) (5,20)\n[blob] (0,0)(1,1)\ngarbage\n[cell] (1,1)(1000,2)";
        let out = parse_grounding_output(text).unwrap();
        assert_eq!(out.reason, "why\nmore why");
        assert_eq!(out.lines.len(), 1);
        assert_eq!(out.lines[0].label, LabelType::RowHead);
        assert_eq!(out.rejected.iter().map(|r| r.line_no).collect::<Vec<_>>(), [4, 5, 6]);
    }

    #[test]
    fn anchor_block_round_trip() {
        let lines = vec![
            GroundingLine { label: LabelType::ColHead, bbox: NormBBox { x1: 0, y1: 0, x2: 10, y2: 10 } },
            GroundingLine { label: LabelType::Cell, bbox: NormBBox { x1: 250, y1: 500, x2: 437, y2: 749 } },
        ];
        let text = format_grounding_lines(&lines);
        assert_eq!(text, "[colhead] (0,0)(10,10)\n[cell] (250,500)(437,749)");
        assert_eq!(parse_grounding_output(&text).unwrap().lines, lines);
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0, 0, 10, 10), &b(0, 0, 10, 10)), 1.0);
        assert_eq!(iou(&b(0, 0, 10, 10), &b(20, 20, 30, 30)), 0.0);
        let v = iou(&b(160, 80, 280, 120), &b(170, 85, 290, 125));
        assert!((v - 3850.0 / 5750.0).abs() < 1e-12);
        assert_eq!(iou(&NormBBox { x1: 5, y1: 5, x2: 5, y2: 9 }, &NormBBox { x1: 5, y1: 5, x2: 5, y2: 9 }), 0.0);
    }

    #[test]
    fn matching_examples() {
        let boxes = [b(0, 0, 10, 10), b(20, 0, 30, 10), b(40, 0, 50, 10)];
        let m = match_boxes(&boxes, &boxes);
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|p| p.iou == 1.0 && p.pred == p.gt));
        let none: [BBox; 0] = [];
        let m = match_boxes(&boxes[..2], &none);
        assert_eq!((m.pairs.len(), m.unmatched_pred, m.unmatched_gt), (0, 2, 0));
    }

    #[test]
    fn assignment_prefers_total_over_greedy() {
        // Weight matrix [[0.8, 0.3], [0.4, 0.7]] driven directly.
        let w = vec![vec![0.8, 0.3], vec![0.4, 0.7]];
        let mut a = max_weight_assignment(&w, 2, 2);
        a.sort();
        assert_eq!(a, vec![(0, 0), (1, 1)]);
        // A greedy pick of 0.9 would lose here: best total is 0.8 + 0.8.
        let w = vec![vec![0.9, 0.8], vec![0.8, 0.0]];
        let mut a = max_weight_assignment(&w, 2, 2);
        a.sort();
        assert_eq!(a, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn summary_examples() {
        let s = iou_summary(&[1.0, 0.5, 0.0]).unwrap();
        assert_eq!((s.mean, s.median), (0.5, 0.5));
        assert_eq!((s.frac_ge_50, s.frac_ge_75, s.frac_ge_90), (2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0));
        let s = iou_summary(&[0.672]).unwrap();
        assert_eq!((s.median, s.frac_ge_50), (0.672, 1.0));
        assert_eq!(iou_summary(&[0.2, 0.4]).unwrap().median, (0.2 + 0.4) / 2.0);
        assert_eq!(iou_summary(&[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn canonical_answers() {
        assert_eq!(canonicalize_answer(" 42.0 "), "42");
        assert_eq!(canonicalize_answer("1,234"), "1234");
        assert_eq!(canonicalize_answer("Paris"), canonicalize_answer("paris"));
        assert_eq!(canonicalize_answer("  New   York "), "new york");
        assert_eq!(canonicalize_answer("12.50%"), "12.5");
        assert!(answers_match("YES", "yes"));
        assert!(!answers_match("31", "30"));
    }

    #[test]
    fn density_buckets() {
        assert_eq!(DensityBucket::of(1), DensityBucket::Sparse);
        assert_eq!(DensityBucket::of(5), DensityBucket::Sparse);
        assert_eq!(DensityBucket::of(6), DensityBucket::Medium);
        assert_eq!(DensityBucket::of(10), DensityBucket::Medium);
        assert_eq!(DensityBucket::of(17), DensityBucket::Dense);
    }

    #[test]
    fn aggregation() {
        let mk = |i: usize, cat: TaskCategory, n: usize, ok: bool| ScoredResult {
            id: i.to_string(),
            category: cat,
            level: cat.level(),
            n_gt_boxes: n,
            correct: ok,
        };
        let rs = vec![
            mk(0, TaskCategory::Retrieval, 3, true),
            mk(1, TaskCategory::Retrieval, 3, false),
            mk(2, TaskCategory::MultiHop, 17, true),
        ];
        let r = aggregate(&rs).unwrap();
        assert_eq!((r.overall.correct, r.overall.total), (2, 3));
        assert_eq!(r.per_category[&TaskCategory::Retrieval].accuracy, 0.5);
        assert_eq!(r.per_level[&Level::L3].accuracy, 1.0);
        assert_eq!(r.density[&DensityBucket::Dense].total, 1);
        let mut left = aggregate(&rs[..1]).unwrap();
        left.merge(&aggregate(&rs[1..]).unwrap());
        assert_eq!(left, r);
        assert_eq!(aggregate(&[]), Err(EvalError::EmptyInput));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0i64..200, 0i64..200, 1i64..100, 1i64..100).prop_map(|(x, y, w, h)| b(x, y, x + w, y + h))
    }

    fn brute_best(w: &[Vec<f64>], rows: usize, cols: usize) -> f64 {
        fn go(i: usize, w: &[Vec<f64>], rows: usize, cols: usize, used: &mut Vec<bool>) -> f64 {
            if i == rows {
                return 0.0;
            }
            let mut best = go(i + 1, w, rows, cols, used);
            for j in 0..cols {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[i][j] + go(i + 1, w, rows, cols, used));
                    used[j] = false;
                }
            }
            best
        }
        go(0, w, rows, cols, &mut vec![false; cols])
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn assignment_is_optimal(preds in prop::collection::vec(arb_box(), 0..=6), gts in prop::collection::vec(arb_box(), 0..=6)) {
            let m = match_boxes(&preds, &gts);
            let w: Vec<Vec<f64>> = preds.iter().map(|p| gts.iter().map(|g| iou(p, g)).collect()).collect();
            let best = brute_best(&w, preds.len(), gts.len());
            prop_assert!((m.total_iou() - best).abs() < 1e-9, "{} vs {}", m.total_iou(), best);
        }

        #[test]
        fn thresholds_are_monotone(v in prop::collection::vec(0.0f64..=1.0, 1..50)) {
            let s = iou_summary(&v).unwrap();
            prop_assert!(s.frac_ge_50 >= s.frac_ge_75 && s.frac_ge_75 >= s.frac_ge_90);
            prop_assert!((0.0..=1.0).contains(&s.median) && (0.0..=1.0).contains(&s.mean));
        }

        #[test]
        fn normalization_is_monotone(dim in 1i64..3000, a in 0i64..3000, c in 0i64..3000) {
            let (a, c) = (a.min(dim), c.min(dim));
            let (lo, hi) = (a.min(c), a.max(c));
            prop_assert!(normalize_coord(lo, dim) <= normalize_coord(hi, dim));
        }
    }
}
