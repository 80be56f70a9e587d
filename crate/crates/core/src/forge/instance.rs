//! Trajectory instances and their template-driven synthesis.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::derive::{derive, ArithOp, CellRef, Derivation, NO_MATCH};
use super::{ForgeError, Level, TaskCategory};
use crate::eval::{normalize_bbox, NormBBox};
use crate::layout::{BBox, LabelType, RegionMap};
use crate::numeric::format_decimal;
use crate::resolve::resolve_evidence_set;
use crate::table::{Axis, HeaderPath, NodeInfo, TableSpec};
use crate::tag::SemanticTag;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub tag: SemanticTag,
    pub label: LabelType,
    pub bbox_px: BBox,
    pub bbox_norm: NormBBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub text: String,
    /// Indices into the instance's evidence list.
    pub boxes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryInstance {
    pub id: String,
    pub table_id: String,
    pub image: String,
    pub image_size: [i64; 2],
    pub question: String,
    pub category: TaskCategory,
    pub level: Level,
    pub answer: String,
    pub tags: Vec<SemanticTag>,
    pub evidence: Vec<EvidenceRecord>,
    pub steps: Vec<ReasoningStep>,
    pub derivation: Derivation,
}

impl TrajectoryInstance {
    pub fn total_boxes(&self) -> usize {
        self.evidence.len()
    }

    pub fn evidence_boxes(&self) -> Vec<BBox> {
        self.evidence.iter().map(|e| e.bbox_px).collect()
    }

    /// Structural checks every stored instance must pass.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.answer.trim().is_empty() {
            return Err("empty answer".into());
        }
        if self.evidence.is_empty() {
            return Err("empty evidence".into());
        }
        if self.steps.is_empty() {
            return Err("no reasoning steps".into());
        }
        if self.level != self.category.level() {
            return Err(format!("level {} does not match category {}", self.level, self.category));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if let Some(b) = s.boxes.iter().find(|&&b| b >= self.evidence.len()) {
                return Err(format!("step {i} cites evidence {b}, only {} exist", self.evidence.len()));
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }
}

pub fn instance_id(table_id: &str, category: TaskCategory, seed: u64) -> String {
    format!("{table_id}-{}-{seed}", category.slug())
}

/// Something a reasoning step points at.
#[derive(Debug, Clone)]
enum Cite {
    Cell(CellRef),
    Header(Axis, HeaderPath),
}

struct Plan {
    tags: Vec<SemanticTag>,
    question: String,
    steps: Vec<(String, Vec<Cite>)>,
    derivation: Derivation,
}

fn q(label: &str) -> String {
    format!("\"{}\"", label.replace('"', "'"))
}

fn path_q(p: &HeaderPath) -> String {
    q(&p.to_string())
}

struct Ctx<'a> {
    spec: &'a TableSpec,
    rng: ChaCha8Rng,
    category: TaskCategory,
}

fn inapplicable<T>(category: TaskCategory, reason: impl Into<String>) -> Result<T, ForgeError> {
    Err(ForgeError::CategoryInapplicable { category, reason: reason.into() })
}

/// A full line of cells along one axis: a column (cells vary by row) or a row
/// (cells vary by column).
#[derive(Debug, Clone)]
struct Line {
    /// Axis whose leaf labels distinguish the cells of the line.
    label_axis: Axis,
    /// Index of the line itself along the other axis.
    index: usize,
    cells: Vec<CellRef>,
}

impl Ctx<'_> {
    fn row_path(&self, r: usize) -> &HeaderPath {
        self.spec.row_tree.leaf_path(r).expect("row in range")
    }

    fn col_path(&self, c: usize) -> &HeaderPath {
        self.spec.col_tree.leaf_path(c).expect("column in range")
    }

    fn label(&self, c: CellRef, axis: Axis) -> &HeaderPath {
        match axis {
            Axis::Row => self.row_path(c.row),
            Axis::Col => self.col_path(c.col),
        }
    }

    fn numeric(&self, c: CellRef) -> Option<Decimal> {
        self.spec.cell(c.row, c.col).and_then(|v| v.numeric)
    }

    fn value_text(&self, c: CellRef) -> String {
        let v = self.spec.cell(c.row, c.col).expect("cell in range");
        match v.numeric {
            Some(n) => format_decimal(n),
            None => q(v.raw.trim()),
        }
    }

    fn values_text(&self, cells: &[CellRef]) -> String {
        cells.iter().map(|&c| self.value_text(c)).collect::<Vec<_>>().join(", ")
    }

    fn cell_tag(&self, c: CellRef) -> SemanticTag {
        SemanticTag::CellIntersect { col: self.col_path(c.col).clone(), row: self.row_path(c.row).clone() }
    }

    fn line_tag(&self, line: &Line) -> SemanticTag {
        match line.label_axis {
            Axis::Row => SemanticTag::ColExtract(self.col_path(line.index).clone()),
            Axis::Col => SemanticTag::RowExtract(self.row_path(line.index).clone()),
        }
    }

    fn line_path(&self, line: &Line) -> &HeaderPath {
        match line.label_axis {
            Axis::Row => self.col_path(line.index),
            Axis::Col => self.row_path(line.index),
        }
    }

    fn line_header(&self, line: &Line) -> Cite {
        let axis = match line.label_axis {
            Axis::Row => Axis::Col,
            Axis::Col => Axis::Row,
        };
        Cite::Header(axis, self.line_path(line).clone())
    }

    fn cites(cells: &[CellRef]) -> Vec<Cite> {
        cells.iter().map(|&c| Cite::Cell(c)).collect()
    }

    /// Columns and rows whose cells are all numeric, with at least `min` cells.
    fn numeric_lines(&self, min: usize) -> Vec<Line> {
        let (nr, nc) = (self.spec.n_rows(), self.spec.n_cols());
        let mut out = Vec::new();
        if nr >= min {
            for c in 0..nc {
                let cells: Vec<CellRef> = (0..nr).map(|r| CellRef::new(r, c)).collect();
                if cells.iter().all(|&x| self.numeric(x).is_some()) {
                    out.push(Line { label_axis: Axis::Row, index: c, cells });
                }
            }
        }
        if nc >= min {
            for r in 0..nr {
                let cells: Vec<CellRef> = (0..nc).map(|c| CellRef::new(r, c)).collect();
                if cells.iter().all(|&x| self.numeric(x).is_some()) {
                    out.push(Line { label_axis: Axis::Col, index: r, cells });
                }
            }
        }
        out
    }

    fn pick_line(&mut self, min: usize, why: &str) -> Result<Line, ForgeError> {
        let lines = self.numeric_lines(min);
        match lines.choose(&mut self.rng) {
            Some(l) => Ok(l.clone()),
            None => inapplicable(self.category, why),
        }
    }

    /// Two distinct numeric cells sharing a row or a column.
    fn pick_pair(&mut self) -> Result<(CellRef, CellRef, Axis), ForgeError> {
        let (nr, nc) = (self.spec.n_rows(), self.spec.n_cols());
        let mut pairs = Vec::new();
        for r in 0..nr {
            for c in 0..nc {
                let a = CellRef::new(r, c);
                if self.numeric(a).is_none() {
                    continue;
                }
                for r2 in r + 1..nr {
                    if self.numeric(CellRef::new(r2, c)).is_some() {
                        pairs.push((a, CellRef::new(r2, c), Axis::Row));
                    }
                }
                for c2 in c + 1..nc {
                    if self.numeric(CellRef::new(r, c2)).is_some() {
                        pairs.push((a, CellRef::new(r, c2), Axis::Col));
                    }
                }
            }
        }
        let Some(&(a, b, axis)) = pairs.choose(&mut self.rng) else {
            return inapplicable(self.category, "needs two numeric cells sharing a row or column");
        };
        Ok(if self.rng.random_bool(0.5) { (a, b, axis) } else { (b, a, axis) })
    }

    fn read_step(&self, c: CellRef) -> (String, Vec<Cite>) {
        (
            format!("Read {} at {}: {}.", path_q(self.col_path(c.col)), path_q(self.row_path(c.row)), self.value_text(c)),
            vec![Cite::Cell(c)],
        )
    }

    fn axis_word(axis: Axis) -> &'static str {
        match axis {
            Axis::Row => "row",
            Axis::Col => "column",
        }
    }

    fn line_noun(line: &Line) -> &'static str {
        match line.label_axis {
            Axis::Row => "column",
            Axis::Col => "row",
        }
    }

    fn plan(&mut self) -> Result<Plan, ForgeError> {
        use TaskCategory::*;
        match self.category {
            Retrieval => self.retrieval(),
            Listing => self.listing(),
            Structure => self.structure(),
            Comparison => self.comparison(),
            Arithmetic => self.arithmetic(),
            Ranking => self.ranking(),
            Counting => self.counting(false),
            CondFiltering => self.counting(true),
            Verification => self.verification(),
            CompArithmetic => self.comp_arithmetic(),
            MultiHop => self.multi_hop(),
            Temporal => self.temporal(),
            CrossHierAgg => self.cross_hier(),
        }
    }

    fn retrieval(&mut self) -> Result<Plan, ForgeError> {
        let mut cands = Vec::new();
        for r in 0..self.spec.n_rows() {
            for c in 0..self.spec.n_cols() {
                if !self.spec.cells[r][c].display().is_empty() {
                    cands.push(CellRef::new(r, c));
                }
            }
        }
        let Some(&cell) = cands.choose(&mut self.rng) else {
            return inapplicable(self.category, "all cells are empty");
        };
        let (rp, cp) = (self.row_path(cell.row).clone(), self.col_path(cell.col).clone());
        Ok(Plan {
            tags: vec![SemanticTag::RowHeadRef(rp.clone()), SemanticTag::ColHeadRef(cp.clone()), self.cell_tag(cell)],
            question: format!("What is the {} value for {}?", cp.spoken(), rp.spoken()),
            steps: vec![
                (format!("Locate row {}.", path_q(&rp)), vec![Cite::Header(Axis::Row, rp)]),
                (format!("Locate column {}.", path_q(&cp)), vec![Cite::Header(Axis::Col, cp)]),
                (format!("Read the intersecting cell: {}.", self.value_text(cell)), vec![Cite::Cell(cell)]),
            ],
            derivation: Derivation::Lookup { cell },
        })
    }

    fn listing(&mut self) -> Result<Plan, ForgeError> {
        let (nr, nc) = (self.spec.n_rows(), self.spec.n_cols());
        let mut lines = Vec::new();
        if nc >= 2 {
            lines.extend((0..nr).map(|r| Line { label_axis: Axis::Col, index: r, cells: (0..nc).map(|c| CellRef::new(r, c)).collect() }));
        }
        if nr >= 2 {
            lines.extend((0..nc).map(|c| Line { label_axis: Axis::Row, index: c, cells: (0..nr).map(|r| CellRef::new(r, c)).collect() }));
        }
        lines.retain(|l| l.cells.iter().all(|c| !self.spec.cells[c.row][c.col].display().is_empty()));
        let Some(line) = lines.choose(&mut self.rng).cloned() else {
            return inapplicable(self.category, "needs a line of at least two non-empty cells");
        };
        let noun = Self::line_noun(&line);
        let path = self.line_path(&line).clone();
        Ok(Plan {
            tags: vec![self.line_tag(&line)],
            question: format!("List all values in the {noun} {}.", path.spoken()),
            steps: vec![
                (format!("Locate the {noun} {}.", path_q(&path)), vec![self.line_header(&line)]),
                (format!("Read its cells in order: {}.", self.values_text(&line.cells)), Self::cites(&line.cells)),
            ],
            derivation: Derivation::List { cells: line.cells },
        })
    }

    fn structure(&mut self) -> Result<Plan, ForgeError> {
        let mut internal: Vec<(Axis, NodeInfo)> = Vec::new();
        for axis in [Axis::Col, Axis::Row] {
            internal.extend(self.spec.tree(axis).nodes().iter().filter(|n| !n.is_leaf).map(|n| (axis, n.clone())));
        }
        if let Some((axis, node)) = internal.choose(&mut self.rng).cloned() {
            let tree = self.spec.tree(axis);
            let leaves: Vec<HeaderPath> = (node.leaf_start..node.leaf_end).map(|i| tree.leaf_path(i).unwrap().clone()).collect();
            let word = Self::axis_word(axis);
            let mut tags = vec![head_tag(axis, node.path.clone())];
            tags.extend(leaves.iter().map(|p| head_tag(axis, p.clone())));
            let n = leaves.len();
            return Ok(Plan {
                tags,
                question: format!("How many {word}s fall under the {word} header {}?", node.path.spoken()),
                steps: vec![
                    (format!("Locate the {word} header {}.", path_q(&node.path)), vec![Cite::Header(axis, node.path.clone())]),
                    (
                        format!("Count the leaf {word}s beneath it: {n}."),
                        leaves.into_iter().map(|p| Cite::Header(axis, p)).collect(),
                    ),
                ],
                derivation: Derivation::HeaderSpan { axis, path: Some(node.path) },
            });
        }
        let axis = if self.rng.random_bool(0.5) { Axis::Col } else { Axis::Row };
        let word = Self::axis_word(axis);
        let leaves: Vec<HeaderPath> = self.spec.tree(axis).leaf_paths_slice().to_vec();
        let n = leaves.len();
        Ok(Plan {
            tags: leaves.iter().map(|p| head_tag(axis, p.clone())).collect(),
            question: format!("How many data {word}s does the table have?"),
            steps: vec![(
                format!("Count the {word} headers: {n}."),
                leaves.into_iter().map(|p| Cite::Header(axis, p)).collect(),
            )],
            derivation: Derivation::HeaderSpan { axis, path: None },
        })
    }

    fn comparison(&mut self) -> Result<Plan, ForgeError> {
        let (a, b, label_axis) = self.pick_pair()?;
        let d = Derivation::Compare { a, b, label_axis };
        let winner = derive(&d, self.spec)?.answer;
        let (la, lb) = (self.label(a, label_axis).clone(), self.label(b, label_axis).clone());
        let shared = match label_axis {
            Axis::Row => self.col_path(a.col).clone(),
            Axis::Col => self.row_path(a.row).clone(),
        };
        let word = Self::axis_word(label_axis);
        Ok(Plan {
            tags: vec![self.cell_tag(a), self.cell_tag(b)],
            question: format!("Which {word} has the larger {} value: {} or {}?", shared.spoken(), la.spoken(), lb.spoken()),
            steps: vec![
                self.read_step(a),
                self.read_step(b),
                (
                    format!("Compare {} with {}; the larger belongs to {}.", self.value_text(a), self.value_text(b), q(&winner)),
                    vec![Cite::Cell(a), Cite::Cell(b)],
                ),
            ],
            derivation: d,
        })
    }

    /// Two or three numeric cells from one line.
    fn pick_operands(&mut self, max: usize) -> Result<Vec<CellRef>, ForgeError> {
        let (nr, nc) = (self.spec.n_rows(), self.spec.n_cols());
        let mut groups: Vec<Vec<CellRef>> = Vec::new();
        for r in 0..nr {
            groups.push((0..nc).map(|c| CellRef::new(r, c)).filter(|&x| self.numeric(x).is_some()).collect());
        }
        for c in 0..nc {
            groups.push((0..nr).map(|r| CellRef::new(r, c)).filter(|&x| self.numeric(x).is_some()).collect());
        }
        groups.retain(|g| g.len() >= 2);
        let Some(group) = groups.choose(&mut self.rng).cloned() else {
            return inapplicable(self.category, "needs two numeric cells sharing a row or column");
        };
        let k = self.rng.random_range(2..=max.min(group.len()));
        let mut picked: Vec<CellRef> = group.choose_multiple(&mut self.rng, k).copied().collect();
        picked.sort();
        Ok(picked)
    }

    fn arithmetic(&mut self) -> Result<Plan, ForgeError> {
        let arith = *[ArithOp::Sum, ArithOp::Difference, ArithOp::Mean].choose(&mut self.rng).unwrap();
        let mut cells = self.pick_operands(if arith == ArithOp::Difference { 2 } else { 3 })?;
        if arith == ArithOp::Difference && self.rng.random_bool(0.5) {
            cells.reverse();
        }
        let d = Derivation::Arith { arith, cells: cells.clone() };
        let answer = derive(&d, self.spec)?.answer;
        let names = cells
            .iter()
            .map(|&c| format!("{} at {}", self.col_path(c.col).spoken(), self.row_path(c.row).spoken()))
            .collect::<Vec<_>>();
        let vals: Vec<String> = cells.iter().map(|&c| self.value_text(c)).collect();
        let (question, last) = match arith {
            ArithOp::Sum => (
                format!("What is the sum of {}?", names.join(" and ")),
                format!("Add them: {} = {answer}.", vals.join(" + ")),
            ),
            ArithOp::Difference => (
                format!("What is {} minus {}?", names[0], names[1]),
                format!("Subtract: {} - {} = {answer}.", vals[0], vals[1]),
            ),
            ArithOp::Mean => (
                format!("What is the average of {}?", names.join(" and ")),
                format!("Average them: ({}) / {} = {answer}.", vals.join(" + "), cells.len()),
            ),
        };
        let mut steps: Vec<_> = cells.iter().map(|&c| self.read_step(c)).collect();
        steps.push((last, Self::cites(&cells)));
        Ok(Plan { tags: cells.iter().map(|&c| self.cell_tag(c)).collect(), question, steps, derivation: d })
    }

    fn ranking(&mut self) -> Result<Plan, ForgeError> {
        let line = self.pick_line(2, "needs a fully numeric row or column of at least two cells")?;
        let k = self.rng.random_range(1..=line.cells.len().min(3));
        let ordinal = ["", "highest", "second highest", "third highest"][k];
        let d = Derivation::Rank { cells: line.cells.clone(), k, label_axis: line.label_axis };
        let answer = derive(&d, self.spec)?.answer;
        let word = Self::axis_word(line.label_axis);
        let path = self.line_path(&line).clone();
        Ok(Plan {
            tags: vec![self.line_tag(&line)],
            question: format!("Which {word} has the {ordinal} {} value?", path.spoken()),
            steps: vec![
                (format!("Locate {}.", path_q(&path)), vec![self.line_header(&line)]),
                (format!("Read its values: {}.", self.values_text(&line.cells)), Self::cites(&line.cells)),
                (format!("Sort them in descending order; position {k} belongs to {}.", q(&answer)), Self::cites(&line.cells)),
            ],
            derivation: d,
        })
    }

    fn threshold(&mut self, cells: &[CellRef]) -> Decimal {
        let vs: Vec<Decimal> = cells.iter().filter_map(|&c| self.numeric(c)).collect();
        *vs.choose(&mut self.rng).expect("non-empty line")
    }

    fn counting(&mut self, filter: bool) -> Result<Plan, ForgeError> {
        let line = self.pick_line(2, "needs a fully numeric row or column of at least two cells")?;
        let threshold = self.threshold(&line.cells);
        let t = format_decimal(threshold);
        let word = Self::axis_word(line.label_axis);
        let path = self.line_path(&line).clone();
        let above: Vec<CellRef> = line.cells.iter().copied().filter(|&c| self.numeric(c).unwrap() > threshold).collect();
        let (d, question, last) = if filter {
            let d = Derivation::Filter { cells: line.cells.clone(), threshold, label_axis: line.label_axis };
            let answer = derive(&d, self.spec)?.answer;
            let last = if answer == NO_MATCH {
                format!("No {word} qualifies.")
            } else {
                let labels: Vec<String> = above.iter().map(|&c| path_q(self.label(c, line.label_axis))).collect();
                format!("The matching {word}s are {}.", labels.join(", "))
            };
            (d, format!("Which {word}s have a {} value greater than {t}?", path.spoken()), last)
        } else {
            let d = Derivation::Count { cells: line.cells.clone(), threshold };
            (d, format!("How many {word}s have a {} value greater than {t}?", path.spoken()), format!("Count them: {}.", above.len()))
        };
        let kept = if above.is_empty() { "none".to_string() } else { self.values_text(&above) };
        Ok(Plan {
            tags: vec![self.line_tag(&line)],
            question,
            steps: vec![
                (format!("Locate {}.", path_q(&path)), vec![self.line_header(&line)]),
                (format!("Read its values: {}.", self.values_text(&line.cells)), Self::cites(&line.cells)),
                (format!("Keep values above {t}: {kept}."), Self::cites(&above)),
                (last, Self::cites(&above)),
            ],
            derivation: d,
        })
    }

    fn verification(&mut self) -> Result<Plan, ForgeError> {
        let (a, b, _) = self.pick_pair()?;
        let d = Derivation::Verify { a, b };
        let answer = derive(&d, self.spec)?.answer;
        let name = |c: CellRef| format!("{} at {}", self.col_path(c.col).spoken(), self.row_path(c.row).spoken());
        let last = if answer == "yes" {
            format!("{} is greater than {}, so the answer is yes.", self.value_text(a), self.value_text(b))
        } else {
            format!("{} is not greater than {}, so the answer is no.", self.value_text(a), self.value_text(b))
        };
        Ok(Plan {
            tags: vec![self.cell_tag(a), self.cell_tag(b)],
            question: format!("Is {} greater than {}?", name(a), name(b)),
            steps: vec![self.read_step(a), self.read_step(b), (last, vec![Cite::Cell(a), Cite::Cell(b)])],
            derivation: d,
        })
    }

    fn comp_arithmetic(&mut self) -> Result<Plan, ForgeError> {
        let (nr, nc) = (self.spec.n_rows(), self.spec.n_cols());
        let mut quads = Vec::new();
        for r1 in 0..nr {
            for r2 in 0..nr {
                if r1 == r2 {
                    continue;
                }
                let cols: Vec<usize> = (0..nc)
                    .filter(|&c| self.numeric(CellRef::new(r1, c)).is_some() && self.numeric(CellRef::new(r2, c)).is_some())
                    .collect();
                if cols.len() >= 2 {
                    quads.push((r1, r2, cols));
                }
            }
        }
        let Some((r_minus, r_plus, cols)) = quads.choose(&mut self.rng).cloned() else {
            return inapplicable(self.category, "needs two rows sharing two numeric columns");
        };
        let mut pick: Vec<usize> = cols.choose_multiple(&mut self.rng, 2).copied().collect();
        pick.sort();
        let plus: Vec<CellRef> = pick.iter().map(|&c| CellRef::new(r_plus, c)).collect();
        let minus: Vec<CellRef> = pick.iter().map(|&c| CellRef::new(r_minus, c)).collect();
        let d = Derivation::SumDiff { plus: plus.clone(), minus: minus.clone() };
        let o = derive(&d, self.spec)?;
        let sum = |cells: &[CellRef]| format_decimal(cells.iter().map(|&c| self.numeric(c).unwrap()).sum());
        let (sp, sm) = (sum(&plus), sum(&minus));
        let (c1, c2) = (self.col_path(pick[0]).clone(), self.col_path(pick[1]).clone());
        let (rp, rm) = (self.row_path(r_plus).clone(), self.row_path(r_minus).clone());
        let mut steps: Vec<_> = plus.iter().chain(&minus).map(|&c| self.read_step(c)).collect();
        steps.push((
            format!("Total for {}: {} + {} = {sp}.", path_q(&rp), self.value_text(plus[0]), self.value_text(plus[1])),
            Self::cites(&plus),
        ));
        steps.push((
            format!("Total for {}: {} + {} = {sm}.", path_q(&rm), self.value_text(minus[0]), self.value_text(minus[1])),
            Self::cites(&minus),
        ));
        steps.push((format!("Difference: {sp} - {sm} = {}.", o.answer), Self::cites(&[plus.clone(), minus.clone()].concat())));
        Ok(Plan {
            tags: plus.iter().chain(&minus).map(|&c| self.cell_tag(c)).collect(),
            question: format!(
                "By how much does the combined {} and {} value of {} exceed that of {}?",
                c1.spoken(),
                c2.spoken(),
                rp.spoken(),
                rm.spoken()
            ),
            steps,
            derivation: d,
        })
    }

    fn multi_hop(&mut self) -> Result<Plan, ForgeError> {
        let lines = self.numeric_lines(2);
        let mut cands = Vec::new();
        for line in lines {
            let others = match line.label_axis {
                Axis::Row => self.spec.n_cols(),
                Axis::Col => self.spec.n_rows(),
            };
            for t in (0..others).filter(|&t| t != line.index) {
                let filled = line.cells.iter().all(|&c| {
                    let at = match line.label_axis {
                        Axis::Row => CellRef::new(c.row, t),
                        Axis::Col => CellRef::new(t, c.col),
                    };
                    !self.spec.cells[at.row][at.col].display().is_empty()
                });
                if filled {
                    cands.push((line.clone(), t));
                }
            }
        }
        let Some((line, target_line)) = cands.choose(&mut self.rng).cloned() else {
            return inapplicable(self.category, "needs a numeric line and a second line to read from");
        };
        let line_axis = match line.label_axis {
            Axis::Row => Axis::Col,
            Axis::Col => Axis::Row,
        };
        let d = Derivation::ArgmaxLookup { keys: line.cells.clone(), target_line, line_axis };
        let o = derive(&d, self.spec)?;
        let target = *o.read.last().expect("argmax reads its target");
        let best = match line_axis {
            Axis::Col => CellRef::new(target.row, line.index),
            Axis::Row => CellRef::new(line.index, target.col),
        };
        let word = Self::axis_word(line.label_axis);
        let key_path = self.line_path(&line).clone();
        let target_lineobj = Line { label_axis: line.label_axis, index: target_line, cells: Vec::new() };
        let target_path = self.line_path(&target_lineobj).clone();
        let winner = self.label(best, line.label_axis).clone();
        Ok(Plan {
            tags: vec![self.line_tag(&line), self.line_tag(&target_lineobj)],
            question: format!(
                "For the {word} with the highest {} value, what is its {} value?",
                key_path.spoken(),
                target_path.spoken()
            ),
            steps: vec![
                (format!("Read {}: {}.", path_q(&key_path), self.values_text(&line.cells)), Self::cites(&line.cells)),
                (format!("The highest is {}, in {}.", self.value_text(best), path_q(&winner)), vec![Cite::Cell(best)]),
                (format!("Locate {}.", path_q(&target_path)), vec![self.line_header(&target_lineobj)]),
                (format!("Read it for {}: {}.", path_q(&winner), self.value_text(target)), vec![Cite::Cell(target)]),
            ],
            derivation: d,
        })
    }

    fn temporal(&mut self) -> Result<Plan, ForgeError> {
        let mut cands = Vec::new();
        for axis in [Axis::Row, Axis::Col] {
            let tree = self.spec.tree(axis);
            let mut dated: Vec<(String, usize)> = (0..tree.leaf_count())
                .filter_map(|i| {
                    let last = tree.leaf_path(i)?.last()?.trim().to_string();
                    temporal_key(&last).map(|k| (k, i))
                })
                .collect();
            dated.sort();
            let n_other = match axis {
                Axis::Row => self.spec.n_cols(),
                Axis::Col => self.spec.n_rows(),
            };
            for x in 0..dated.len() {
                for y in x + 1..dated.len() {
                    if dated[x].0 == dated[y].0 {
                        continue;
                    }
                    for o in 0..n_other {
                        let at = |i: usize| match axis {
                            Axis::Row => CellRef::new(i, o),
                            Axis::Col => CellRef::new(o, i),
                        };
                        let (from, to) = (at(dated[x].1), at(dated[y].1));
                        if self.numeric(from).is_some() && self.numeric(to).is_some() {
                            cands.push((axis, from, to));
                        }
                    }
                }
            }
        }
        let Some(&(axis, from, to)) = cands.choose(&mut self.rng) else {
            return inapplicable(self.category, "needs year or date labels with numeric values");
        };
        let d = Derivation::Change { from, to };
        let answer = derive(&d, self.spec)?.answer;
        let measure = match axis {
            Axis::Row => self.col_path(from.col).clone(),
            Axis::Col => self.row_path(from.row).clone(),
        };
        let (lf, lt) = (self.label(from, axis).clone(), self.label(to, axis).clone());
        Ok(Plan {
            tags: vec![self.cell_tag(from), self.cell_tag(to)],
            question: format!("By how much did {} change from {} to {}?", measure.spoken(), lf.spoken(), lt.spoken()),
            steps: vec![
                self.read_step(from),
                self.read_step(to),
                (
                    format!("Change: {} - {} = {answer}.", self.value_text(to), self.value_text(from)),
                    vec![Cite::Cell(from), Cite::Cell(to)],
                ),
            ],
            derivation: d,
        })
    }

    fn cross_hier(&mut self) -> Result<Plan, ForgeError> {
        let mut cands = Vec::new();
        for axis in [Axis::Col, Axis::Row] {
            for node in self.spec.tree(axis).nodes().iter().filter(|n| !n.is_leaf) {
                let cells: Vec<CellRef> = (node.leaf_start..node.leaf_end)
                    .flat_map(|i| {
                        let n_other = match axis {
                            Axis::Col => self.spec.n_rows(),
                            Axis::Row => self.spec.n_cols(),
                        };
                        (0..n_other).map(move |o| match axis {
                            Axis::Col => CellRef::new(o, i),
                            Axis::Row => CellRef::new(i, o),
                        })
                    })
                    .collect();
                if cells.iter().all(|&c| self.numeric(c).is_some()) {
                    cands.push((axis, node.clone()));
                }
            }
        }
        let Some((axis, node)) = cands.choose(&mut self.rng).cloned() else {
            return inapplicable(self.category, "needs a merged header over numeric cells");
        };
        let label_axis = match axis {
            Axis::Col => Axis::Row,
            Axis::Row => Axis::Col,
        };
        let lines: Vec<Line> = (node.leaf_start..node.leaf_end)
            .map(|i| {
                let n_other = match axis {
                    Axis::Col => self.spec.n_rows(),
                    Axis::Row => self.spec.n_cols(),
                };
                let cells = (0..n_other)
                    .map(|o| match axis {
                        Axis::Col => CellRef::new(o, i),
                        Axis::Row => CellRef::new(i, o),
                    })
                    .collect();
                Line { label_axis, index: i, cells }
            })
            .collect();
        let cells: Vec<CellRef> = lines.iter().flat_map(|l| l.cells.iter().copied()).collect();
        let d = Derivation::Arith { arith: ArithOp::Sum, cells: cells.clone() };
        let answer = derive(&d, self.spec)?.answer;
        let word = Self::axis_word(axis);
        let mut tags = vec![head_tag(axis, node.path.clone())];
        tags.extend(lines.iter().map(|l| self.line_tag(l)));
        let mut steps = vec![(
            format!("Locate the {word} header {} and its sub-{word}s.", path_q(&node.path)),
            std::iter::once(Cite::Header(axis, node.path.clone())).chain(lines.iter().map(|l| self.line_header(l))).collect(),
        )];
        for l in &lines {
            steps.push((format!("Read {}: {}.", path_q(self.line_path(l)), self.values_text(&l.cells)), Self::cites(&l.cells)));
        }
        let vals: Vec<String> = cells.iter().map(|&c| self.value_text(c)).collect();
        steps.push((format!("Add all values: {} = {answer}.", vals.join(" + ")), Self::cites(&cells)));
        Ok(Plan {
            tags,
            question: format!("What is the total of all values under the {word} header {}?", node.path.spoken()),
            steps,
            derivation: d,
        })
    }
}

fn head_tag(axis: Axis, path: HeaderPath) -> SemanticTag {
    match axis {
        Axis::Col => SemanticTag::ColHeadRef(path),
        Axis::Row => SemanticTag::RowHeadRef(path),
    }
}

/// Sortable key for labels that read as a year (`2020`) or an ISO date
/// (`2020-03`, `2020-03-31`).
pub fn temporal_key(label: &str) -> Option<String> {
    let parts: Vec<&str> = label.split('-').collect();
    let year = parts.first()?;
    if year.len() != 4 || !year.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let y: u32 = year.parse().ok()?;
    if !(1000..=2999).contains(&y) {
        return None;
    }
    let bounded = |s: &str, hi: u32| s.len() == 2 && s.parse::<u32>().is_ok_and(|v| (1..=hi).contains(&v));
    match parts[1..] {
        [] => Some(format!("{y:04}-00-00")),
        [m] if bounded(m, 12) => Some(format!("{y:04}-{m}-00")),
        [m, d] if bounded(m, 12) && bounded(d, 31) => Some(format!("{y:04}-{m}-{d}")),
        _ => None,
    }
}

fn seed_rng(seed: u64, category: TaskCategory) -> ChaCha8Rng {
    let salt = TaskCategory::ALL.iter().position(|c| *c == category).unwrap() as u64 + 1;
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Builds one instance: picks targets with a seeded generator, emits a
/// templated question, tags, resolved evidence, cited steps and the derived
/// answer.
pub fn synthesize_instance(
    spec: &TableSpec,
    map: &RegionMap,
    category: TaskCategory,
    seed: u64,
    image_ref: &str,
) -> Result<TrajectoryInstance, ForgeError> {
    let mut ctx = Ctx { spec, rng: seed_rng(seed, category), category };
    let plan = ctx.plan()?;
    let answer = derive(&plan.derivation, spec)?.answer;
    let set = resolve_evidence_set(&plan.tags, spec, map)?;
    let evidence = set
        .distinct()
        .into_iter()
        .map(|e| {
            let bbox_norm = normalize_bbox(&e.bbox_px, map.image_w, map.image_h)?;
            Ok(EvidenceRecord { tag: e.tag, label: e.label, bbox_px: e.bbox_px, bbox_norm })
        })
        .collect::<Result<Vec<_>, ForgeError>>()?;
    let index: HashMap<BBox, usize> = evidence.iter().enumerate().map(|(i, e)| (e.bbox_px, i)).collect();
    let mut steps = Vec::with_capacity(plan.steps.len());
    for (text, cites) in plan.steps {
        let mut boxes = Vec::new();
        for cite in cites {
            let region = match &cite {
                Cite::Cell(c) => map.cell(c.row, c.col),
                Cite::Header(axis, p) => map.header(*axis, p),
            };
            let bbox = region.map(|r| r.bbox).ok_or_else(|| ForgeError::Internal(format!("no region for {cite:?}")))?;
            let i = *index
                .get(&bbox)
                .ok_or_else(|| ForgeError::Internal(format!("step cites {cite:?} outside the evidence set")))?;
            if !boxes.contains(&i) {
                boxes.push(i);
            }
        }
        steps.push(ReasoningStep { text, boxes });
    }
    let inst = TrajectoryInstance {
        id: instance_id(&spec.table_id, category, seed),
        table_id: spec.table_id.clone(),
        image: image_ref.to_string(),
        image_size: [map.image_w, map.image_h],
        question: plan.question,
        category,
        level: category.level(),
        answer,
        tags: plan.tags,
        evidence,
        steps,
        derivation: plan.derivation,
    };
    inst.validate().map_err(ForgeError::Internal)?;
    Ok(inst)
}

/// Shuffles with the crate's seeded generator; shared by the split and audit
/// samplers.
pub(crate) fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}
