//! Structured answer derivations.
//!
//! Every synthesized instance stores the operation that produced its answer.
//! Re-running [`derive`] against the table reproduces the answer and the set
//! of numbers a faithful rationale may mention.

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{format_decimal, round_result};
use crate::table::{Axis, HeaderPath, TableSpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnswerError {
    #[error("operand is not numeric{}", .0.map(|c| format!(" at row {}, col {}", c.row, c.col)).unwrap_or_default())]
    NonNumericOperand(Option<CellRef>),
    #[error("cell ({}, {}) is outside the grid", .0.row, .0.col)]
    CellOutOfRange(CellRef),
    #[error("header path {0} not found")]
    HeaderNotFound(HeaderPath),
    #[error("{0}")]
    Arity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellRef {
    pub row: usize,
    pub col: usize,
}

impl CellRef {
    pub fn new(row: usize, col: usize) -> Self {
        CellRef { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArithOp {
    Sum,
    /// First operand minus second.
    Difference,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Derivation {
    Lookup { cell: CellRef },
    List { cells: Vec<CellRef> },
    /// Leaf count under a header node, or of the whole axis when `path` is
    /// absent.
    HeaderSpan { axis: Axis, path: Option<HeaderPath> },
    /// Label (along `label_axis`) of the larger operand; ties go to `a`.
    Compare { a: CellRef, b: CellRef, label_axis: Axis },
    Arith { arith: ArithOp, cells: Vec<CellRef> },
    /// Label of the k-th largest operand (1-based).
    Rank { cells: Vec<CellRef>, k: usize, label_axis: Axis },
    /// Number of operands strictly greater than the threshold.
    Count { cells: Vec<CellRef>, threshold: Decimal },
    /// Labels of operands strictly greater than the threshold.
    Filter { cells: Vec<CellRef>, threshold: Decimal, label_axis: Axis },
    /// "yes" iff a > b.
    Verify { a: CellRef, b: CellRef },
    /// sum(plus) - sum(minus).
    SumDiff { plus: Vec<CellRef>, minus: Vec<CellRef> },
    /// Finds the largest key along one line, then reads the same position on
    /// `target_line` (a line index along `line_axis`).
    ArgmaxLookup { keys: Vec<CellRef>, target_line: usize, line_axis: Axis },
    /// to - from.
    Change { from: CellRef, to: CellRef },
}

/// Answer plus every number a rationale for it may legitimately state:
/// operand values, declared parameters, intermediate results and the result.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub answer: String,
    pub admissible: Vec<Decimal>,
    /// Every data cell the derivation read, including value-dependent ones.
    pub read: Vec<CellRef>,
}

pub const NO_MATCH: &str = "none";

impl Derivation {
    /// Every data cell the derivation reads.
    pub fn cells(&self) -> Vec<CellRef> {
        match self {
            Derivation::Lookup { cell } => vec![*cell],
            Derivation::Compare { a, b, .. } | Derivation::Verify { a, b } => vec![*a, *b],
            Derivation::Change { from, to } => vec![*from, *to],
            Derivation::List { cells }
            | Derivation::Arith { cells, .. }
            | Derivation::Rank { cells, .. }
            | Derivation::Count { cells, .. }
            | Derivation::Filter { cells, .. } => cells.clone(),
            Derivation::SumDiff { plus, minus } => plus.iter().chain(minus).copied().collect(),
            // The looked-up target depends on the values; see `Outcome::read`.
            Derivation::ArgmaxLookup { keys, .. } => keys.clone(),
            Derivation::HeaderSpan { .. } => Vec::new(),
        }
    }
}

fn cell(spec: &TableSpec, c: CellRef) -> Result<&crate::table::CellValue, AnswerError> {
    spec.cell(c.row, c.col).ok_or(AnswerError::CellOutOfRange(c))
}

fn num(spec: &TableSpec, c: CellRef) -> Result<Decimal, AnswerError> {
    cell(spec, c)?.numeric.ok_or(AnswerError::NonNumericOperand(Some(c)))
}

fn nums(spec: &TableSpec, cells: &[CellRef]) -> Result<Vec<Decimal>, AnswerError> {
    if cells.is_empty() {
        return Err(AnswerError::NonNumericOperand(None));
    }
    cells.iter().map(|&c| num(spec, c)).collect()
}

/// Label of a cell along an axis: its leaf header path.
pub fn axis_label(spec: &TableSpec, c: CellRef, axis: Axis) -> Result<String, AnswerError> {
    let idx = match axis {
        Axis::Row => c.row,
        Axis::Col => c.col,
    };
    spec.tree(axis).leaf_path(idx).map(ToString::to_string).ok_or(AnswerError::CellOutOfRange(c))
}

fn number(v: Decimal) -> String {
    format_decimal(v)
}

/// Recomputes the answer and the admissible numbers from the table.
pub fn derive(d: &Derivation, spec: &TableSpec) -> Result<Outcome, AnswerError> {
    let mut admissible = Vec::new();
    let mut read = d.cells();
    let answer = match d {
        Derivation::Lookup { cell: c } => {
            let v = cell(spec, *c)?;
            admissible.extend(v.numeric);
            v.display()
        }
        Derivation::List { cells } => {
            if cells.is_empty() {
                return Err(AnswerError::Arity("listing needs at least one cell".into()));
            }
            let values = cells.iter().map(|&c| cell(spec, c)).collect::<Result<Vec<_>, _>>()?;
            admissible.extend(values.iter().filter_map(|v| v.numeric));
            values.iter().map(|v| v.display()).collect::<Vec<_>>().join(", ")
        }
        Derivation::HeaderSpan { axis, path } => {
            let tree = spec.tree(*axis);
            let n = match path {
                Some(p) => {
                    let node = tree.node(p).ok_or_else(|| AnswerError::HeaderNotFound(p.clone()))?;
                    node.leaf_end - node.leaf_start
                }
                None => tree.leaf_count(),
            };
            admissible.push(Decimal::from(n));
            n.to_string()
        }
        Derivation::Compare { a, b, label_axis } => {
            let (va, vb) = (num(spec, *a)?, num(spec, *b)?);
            admissible.extend([va, vb]);
            let winner = if vb > va { b } else { a };
            axis_label(spec, *winner, *label_axis)?
        }
        Derivation::Arith { arith, cells } => {
            let vs = nums(spec, cells)?;
            admissible.extend(vs.iter().copied());
            let result = match arith {
                ArithOp::Sum => vs.iter().sum(),
                ArithOp::Difference => {
                    let [x, y] = vs[..] else {
                        return Err(AnswerError::Arity("difference takes exactly two operands".into()));
                    };
                    x - y
                }
                ArithOp::Mean => {
                    let n = Decimal::from(vs.len());
                    admissible.push(n);
                    round_result(vs.iter().sum::<Decimal>() / n)
                }
            };
            admissible.push(result);
            number(result)
        }
        Derivation::Rank { cells, k, label_axis } => {
            let vs = nums(spec, cells)?;
            if *k == 0 || *k > vs.len() {
                return Err(AnswerError::Arity(format!("rank {k} out of 1..={}", vs.len())));
            }
            admissible.extend(vs.iter().copied());
            admissible.push(Decimal::from(*k));
            let mut order: Vec<usize> = (0..vs.len()).collect();
            // Stable: equal values keep reading order.
            order.sort_by(|&i, &j| vs[j].cmp(&vs[i]));
            axis_label(spec, cells[order[k - 1]], *label_axis)?
        }
        Derivation::Count { cells, threshold } => {
            let vs = nums(spec, cells)?;
            admissible.extend(vs.iter().copied());
            admissible.push(*threshold);
            let n = vs.iter().filter(|v| **v > *threshold).count();
            admissible.push(Decimal::from(n));
            n.to_string()
        }
        Derivation::Filter { cells, threshold, label_axis } => {
            let vs = nums(spec, cells)?;
            admissible.extend(vs.iter().copied());
            admissible.push(*threshold);
            let labels = cells
                .iter()
                .zip(&vs)
                .filter(|(_, v)| **v > *threshold)
                .map(|(c, _)| axis_label(spec, *c, *label_axis))
                .collect::<Result<Vec<_>, _>>()?;
            if labels.is_empty() {
                NO_MATCH.to_string()
            } else {
                labels.join(", ")
            }
        }
        Derivation::Verify { a, b } => {
            let (va, vb) = (num(spec, *a)?, num(spec, *b)?);
            admissible.extend([va, vb]);
            if va > vb { "yes" } else { "no" }.to_string()
        }
        Derivation::SumDiff { plus, minus } => {
            let p = nums(spec, plus)?;
            let m = nums(spec, minus)?;
            admissible.extend(p.iter().chain(&m).copied());
            let (sp, sm): (Decimal, Decimal) = (p.iter().sum(), m.iter().sum());
            admissible.extend([sp, sm, sp - sm]);
            number(sp - sm)
        }
        Derivation::ArgmaxLookup { keys, target_line, line_axis } => {
            let vs = nums(spec, keys)?;
            admissible.extend(vs.iter().copied());
            let mut best = 0;
            for (i, v) in vs.iter().enumerate() {
                if *v > vs[best] {
                    best = i;
                }
            }
            let k = keys[best];
            let target_ref = match line_axis {
                Axis::Col => CellRef::new(k.row, *target_line),
                Axis::Row => CellRef::new(*target_line, k.col),
            };
            let target = cell(spec, target_ref)?;
            read.push(target_ref);
            admissible.extend(target.numeric);
            target.display()
        }
        Derivation::Change { from, to } => {
            let (a, b) = (num(spec, *from)?, num(spec, *to)?);
            admissible.extend([a, b, b - a]);
            number(b - a)
        }
    };
    Ok(Outcome { answer, admissible, read })
}

/// The answer text a derivation yields over `spec`.
pub fn compute_answer(d: &Derivation, spec: &TableSpec) -> Result<String, AnswerError> {
    derive(d, spec).map(|o| o.answer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_a;

    fn c(r: usize, col: usize) -> CellRef {
        CellRef::new(r, col)
    }

    #[test]
    fn examples() {
        let spec = fixture_a();
        let cmp = Derivation::Compare { a: c(0, 0), b: c(1, 0), label_axis: Axis::Row };
        assert_eq!(compute_answer(&cmp, &spec).unwrap(), "2021");
        let count = Derivation::Count { cells: vec![c(0, 2), c(1, 2)], threshold: Decimal::from(10) };
        assert_eq!(compute_answer(&count, &spec).unwrap(), "1");
        let empty = Derivation::Arith { arith: ArithOp::Sum, cells: vec![] };
        assert_eq!(compute_answer(&empty, &spec), Err(AnswerError::NonNumericOperand(None)));
        let sum = Derivation::Arith { arith: ArithOp::Sum, cells: vec![c(0, 0), c(0, 1)] };
        assert_eq!(compute_answer(&sum, &spec).unwrap(), "30");
    }

    #[test]
    fn every_operation_on_fixture() {
        let spec = fixture_a();
        let cases: Vec<(Derivation, &str)> = vec![
            (Derivation::Lookup { cell: c(1, 3) }, "16"),
            (Derivation::List { cells: vec![c(0, 0), c(0, 1), c(0, 2), c(0, 3)] }, "10, 20, 5, 8"),
            (Derivation::HeaderSpan { axis: Axis::Col, path: Some(HeaderPath::new(["Revenue"])) }, "2"),
            (Derivation::HeaderSpan { axis: Axis::Col, path: None }, "4"),
            (Derivation::Arith { arith: ArithOp::Difference, cells: vec![c(0, 2), c(1, 2)] }, "-7"),
            (Derivation::Arith { arith: ArithOp::Mean, cells: vec![c(0, 0), c(0, 1), c(0, 2)] }, "11.6667"),
            (Derivation::Rank { cells: vec![c(0, 1), c(1, 1)], k: 2, label_axis: Axis::Row }, "2020"),
            (Derivation::Filter { cells: vec![c(0, 0), c(0, 1), c(0, 2), c(0, 3)], threshold: Decimal::from(7), label_axis: Axis::Col }, "Revenue>Q1, Revenue>Q2, Cost>Q2"),
            (Derivation::Filter { cells: vec![c(0, 0)], threshold: Decimal::from(99), label_axis: Axis::Col }, "none"),
            (Derivation::Verify { a: c(0, 3), b: c(0, 2) }, "yes"),
            (Derivation::Verify { a: c(0, 2), b: c(0, 3) }, "no"),
            (Derivation::SumDiff { plus: vec![c(1, 0), c(1, 1)], minus: vec![c(0, 0), c(0, 1)] }, "40"),
            (Derivation::ArgmaxLookup { keys: vec![c(0, 2), c(1, 2)], target_line: 3, line_axis: Axis::Col }, "16"),
            (Derivation::ArgmaxLookup { keys: vec![c(0, 0), c(0, 1), c(0, 2)], target_line: 1, line_axis: Axis::Row }, "40"),
            (Derivation::Change { from: c(0, 1), to: c(1, 1) }, "20"),
        ];
        for (d, want) in cases {
            assert_eq!(compute_answer(&d, &spec).unwrap(), want, "{d:?}");
        }
    }

    #[test]
    fn admissible_numbers_include_intermediates() {
        let spec = fixture_a();
        let d = Derivation::SumDiff { plus: vec![c(1, 0), c(1, 1)], minus: vec![c(0, 0), c(0, 1)] };
        let o = derive(&d, &spec).unwrap();
        for v in [10, 20, 30, 40, 70, 40] {
            assert!(o.admissible.contains(&Decimal::from(v)), "{v}");
        }
    }

    #[test]
    fn non_numeric_operand() {
        let mut spec = fixture_a();
        spec.cells[0][0] = crate::table::CellValue::new("n/a");
        let d = Derivation::Arith { arith: ArithOp::Sum, cells: vec![c(0, 0), c(0, 1)] };
        assert_eq!(compute_answer(&d, &spec), Err(AnswerError::NonNumericOperand(Some(c(0, 0)))));
        assert_eq!(compute_answer(&Derivation::Lookup { cell: c(0, 0) }, &spec).unwrap(), "n/a");
        assert!(matches!(compute_answer(&Derivation::Lookup { cell: c(7, 0) }, &spec), Err(AnswerError::CellOutOfRange(_))));
    }
}
