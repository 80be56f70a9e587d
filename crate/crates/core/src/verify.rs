//! Automated screening of synthesized instances, audit sampling, and the
//! review-decision loop.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::normalize_bbox;
use crate::forge::{derive, seeded_shuffle, Derivation, TrajectoryInstance};
use crate::layout::{BBox, GridRef, LabelType, RegionMap};
use crate::numeric::{approx_eq, format_decimal};
use crate::table::{Axis, TableSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("audit rate {0} must lie in (0, 1]")]
    RateInvalid(f64),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("invalid patch: {0}")]
    PatchInvalid(String),
    #[error("no table {0} registered for verification")]
    MissingTable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlagKind {
    SpatialOutOfBounds,
    SpatialMisaligned,
    LogicalUnanchored,
    AnswerInconsistent,
}

impl fmt::Display for FlagKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub kind: FlagKind,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_index: Option<usize>,
}

impl Flag {
    fn new(inst: &TrajectoryInstance, kind: FlagKind, detail: String, evidence_index: Option<usize>) -> Self {
        Flag { instance_id: inst.id.clone(), kind, detail, evidence_index }
    }
}

pub fn check_spatial(inst: &TrajectoryInstance, map: &RegionMap) -> Vec<Flag> {
    let mut flags = Vec::new();
    for (i, e) in inst.evidence.iter().enumerate() {
        let b = e.bbox_px;
        if !b.is_valid() || !b.within(map.image_w, map.image_h) {
            flags.push(Flag::new(
                inst,
                FlagKind::SpatialOutOfBounds,
                format!("box {b} exceeds the {}x{} image", map.image_w, map.image_h),
                Some(i),
            ));
        } else if map.region_at(&b).is_none() {
            flags.push(Flag::new(inst, FlagKind::SpatialMisaligned, format!("box {b} matches no rendered region"), Some(i)));
        } else if normalize_bbox(&b, map.image_w, map.image_h).ok() != Some(e.bbox_norm) {
            flags.push(Flag::new(
                inst,
                FlagKind::SpatialMisaligned,
                format!("normalized box {} disagrees with pixel box {b}", e.bbox_norm),
                Some(i),
            ));
        }
    }
    flags
}

/// A numeric literal found in free text, by byte span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Literal {
    pub start: usize,
    pub end: usize,
    pub value: Decimal,
}

/// Numbers stated in a step text. Double-quoted spans (header labels) are
/// skipped, digits glued to a preceding letter are part of a word, and a
/// leading '-' counts only after whitespace, '(' or the start of the text.
pub fn scan_literals(text: &str) -> Vec<Literal> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut in_quote = false;
    let mut i = 0;
    while i < b.len() {
        let ch = b[i];
        if ch == b'"' {
            in_quote = !in_quote;
            i += 1;
            continue;
        }
        let glued = i > 0 && (b[i - 1].is_ascii_alphanumeric() || b[i - 1] == b'_' || b[i - 1] == b'.');
        if in_quote || !ch.is_ascii_digit() || glued {
            i += 1;
            continue;
        }
        let mut start = i;
        if i > 0 && b[i - 1] == b'-' && (i == 1 || b[i - 2].is_ascii_whitespace() || b[i - 2] == b'(') {
            start = i - 1;
        }
        let mut end = i;
        while end < b.len() && b[end].is_ascii_digit() {
            end += 1;
        }
        if end + 1 < b.len() && b[end] == b'.' && b[end + 1].is_ascii_digit() {
            end += 1;
            while end < b.len() && b[end].is_ascii_digit() {
                end += 1;
            }
        }
        if let Ok(value) = text[start..end].parse::<Decimal>() {
            out.push(Literal { start, end, value });
        }
        i = end;
    }
    out
}

fn evidence_cells(inst: &TrajectoryInstance, map: &RegionMap) -> Vec<(usize, usize)> {
    inst.evidence
        .iter()
        .filter_map(|e| match map.region_at(&e.bbox_px) {
            Some(r) if r.label == LabelType::Cell => match r.grid {
                GridRef::Cell { row, col } => Some((row, col)),
                _ => None,
            },
            _ => None,
        })
        .collect()
}

/// Numbers a step text may state: values of anchored cells plus the
/// operands, parameters, intermediates and result of the stored derivation.
pub fn admissible_values(inst: &TrajectoryInstance, spec: &TableSpec, map: &RegionMap) -> Vec<Decimal> {
    let mut vals: Vec<Decimal> =
        evidence_cells(inst, map).into_iter().filter_map(|(r, c)| spec.cell(r, c).and_then(|v| v.numeric)).collect();
    if let Ok(o) = derive(&inst.derivation, spec) {
        vals.extend(o.admissible);
    }
    vals
}

fn header_boxes(d: &Derivation, spec: &TableSpec, map: &RegionMap) -> Vec<(String, Option<BBox>)> {
    let Derivation::HeaderSpan { axis, path } = d else {
        return Vec::new();
    };
    let paths = match path {
        Some(p) => vec![p.clone()],
        None => spec.tree(*axis).leaf_paths_slice().to_vec(),
    };
    let word = match axis {
        Axis::Row => "row",
        Axis::Col => "column",
    };
    paths.into_iter().map(|p| (format!("{word} header {p}"), map.header(*axis, &p).map(|r| r.bbox))).collect()
}

pub fn check_logical(inst: &TrajectoryInstance, spec: &TableSpec, map: &RegionMap) -> Vec<Flag> {
    let mut flags = Vec::new();
    let outcome = derive(&inst.derivation, spec);
    let read = match &outcome {
        Ok(o) => {
            if o.answer != inst.answer.trim() {
                flags.push(Flag::new(
                    inst,
                    FlagKind::AnswerInconsistent,
                    format!("stored answer {:?}, table yields {:?}", inst.answer, o.answer),
                    None,
                ));
            }
            o.read.clone()
        }
        Err(e) => {
            flags.push(Flag::new(inst, FlagKind::AnswerInconsistent, format!("derivation fails: {e}"), None));
            inst.derivation.cells()
        }
    };

    let boxes: HashSet<BBox> = inst.evidence.iter().map(|e| e.bbox_px).collect();
    for c in read {
        match map.cell(c.row, c.col) {
            Some(r) if boxes.contains(&r.bbox) => {}
            _ => flags.push(Flag::new(
                inst,
                FlagKind::LogicalUnanchored,
                format!("cell ({}, {}) is used by the answer but not anchored", c.row, c.col),
                None,
            )),
        }
    }
    for (what, bbox) in header_boxes(&inst.derivation, spec, map) {
        if !bbox.is_some_and(|b| boxes.contains(&b)) {
            flags.push(Flag::new(inst, FlagKind::LogicalUnanchored, format!("{what} is used but not anchored"), None));
        }
    }

    let allowed = admissible_values(inst, spec, map);
    for (si, step) in inst.steps.iter().enumerate() {
        if let Some(&b) = step.boxes.iter().find(|&&b| b >= inst.evidence.len()) {
            flags.push(Flag::new(inst, FlagKind::LogicalUnanchored, format!("step {si} cites missing evidence {b}"), None));
        }
        for lit in scan_literals(&step.text) {
            if !allowed.iter().any(|a| approx_eq(*a, lit.value)) {
                flags.push(Flag::new(
                    inst,
                    FlagKind::LogicalUnanchored,
                    format!("step {si} states {} which no anchored value supports", format_decimal(lit.value)),
                    None,
                ));
            }
        }
    }
    flags
}

pub fn verify_instance(inst: &TrajectoryInstance, spec: &TableSpec, map: &RegionMap) -> Vec<Flag> {
    let mut flags = check_spatial(inst, map);
    flags.extend(check_logical(inst, spec, map));
    flags
}

/// Seeded sample of ⌈rate·N⌉ ids, followed by any flagged ids not already
/// drawn.
pub fn sample_audit(ids: &[String], flagged: &[String], rate: f64, seed: u64) -> Result<Vec<String>, VerifyError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(VerifyError::RateInvalid(rate));
    }
    let k = ((rate * ids.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut pool: Vec<&String> = ids.iter().collect();
    pool.sort();
    seeded_shuffle(&mut pool, seed);
    let mut out: Vec<String> = pool.into_iter().take(k).cloned().collect();
    let mut seen: HashSet<String> = out.iter().cloned().collect();
    for f in flagged {
        if seen.insert(f.clone()) {
            out.push(f.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewAction {
    Accept,
    Modify,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxEdit {
    pub index: usize,
    pub bbox_px: BBox,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BoxEdit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub instance_id: String,
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<Patch>,
    pub reviewer: String,
    pub timestamp: String,
}

/// Append-only record of every decision ever applied.
#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Vec<ReviewDecision>,
}

impl AuditLog {
    pub fn append(&mut self, d: ReviewDecision) {
        self.records.push(d);
    }

    pub fn records(&self) -> &[ReviewDecision] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Instances under review together with the tables they were built from.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    instances: Vec<TrajectoryInstance>,
    tables: HashMap<String, (TableSpec, RegionMap)>,
    flags: BTreeMap<String, Vec<Flag>>,
    log: AuditLog,
}

impl Corpus {
    pub fn new(instances: Vec<TrajectoryInstance>, tables: Vec<(TableSpec, RegionMap)>) -> Self {
        let tables = tables.into_iter().map(|(s, m)| (s.table_id.clone(), (s, m))).collect();
        Corpus { instances, tables, flags: BTreeMap::new(), log: AuditLog::default() }
    }

    pub fn instances(&self) -> &[TrajectoryInstance] {
        &self.instances
    }

    pub fn instance(&self, id: &str) -> Option<&TrajectoryInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn table(&self, table_id: &str) -> Option<&(TableSpec, RegionMap)> {
        self.tables.get(table_id)
    }

    pub fn log(&self) -> &AuditLog {
        &self.log
    }

    /// Open flags, keyed by instance id.
    pub fn flags(&self) -> &BTreeMap<String, Vec<Flag>> {
        &self.flags
    }

    pub fn set_flags(&mut self, flags: Vec<Flag>) {
        self.flags.clear();
        for f in flags {
            self.flags.entry(f.instance_id.clone()).or_default().push(f);
        }
    }

    pub fn check(&self, inst: &TrajectoryInstance) -> Result<Vec<Flag>, VerifyError> {
        let (spec, map) = self.tables.get(&inst.table_id).ok_or_else(|| VerifyError::MissingTable(inst.table_id.clone()))?;
        Ok(verify_instance(inst, spec, map))
    }

    /// Runs both checks over every instance and stores the result.
    pub fn verify_all(&mut self) -> Result<Vec<Flag>, VerifyError> {
        let mut all = Vec::new();
        for inst in &self.instances {
            all.extend(self.check(inst)?);
        }
        self.set_flags(all.clone());
        Ok(all)
    }

    /// Applies one decision and logs it. Returns the instance's open flags
    /// afterwards (empty for accept and drop).
    pub fn apply_decision(&mut self, d: ReviewDecision) -> Result<Vec<Flag>, VerifyError> {
        let pos = self
            .instances
            .iter()
            .position(|i| i.id == d.instance_id)
            .ok_or_else(|| VerifyError::UnknownInstance(d.instance_id.clone()))?;
        let remaining = match (d.action, &d.patch) {
            (ReviewAction::Modify, None) => return Err(VerifyError::PatchInvalid("modify needs a patch".into())),
            (ReviewAction::Accept | ReviewAction::Drop, Some(_)) => {
                return Err(VerifyError::PatchInvalid("only modify carries a patch".into()))
            }
            (ReviewAction::Accept, None) => {
                self.flags.remove(&d.instance_id);
                Vec::new()
            }
            (ReviewAction::Drop, None) => {
                self.instances.remove(pos);
                self.flags.remove(&d.instance_id);
                Vec::new()
            }
            (ReviewAction::Modify, Some(patch)) => {
                let patched = self.patched(&self.instances[pos], patch)?;
                let flags = self.check(&patched)?;
                self.instances[pos] = patched;
                if flags.is_empty() {
                    self.flags.remove(&d.instance_id);
                } else {
                    self.flags.insert(d.instance_id.clone(), flags.clone());
                }
                flags
            }
        };
        self.log.append(d);
        Ok(remaining)
    }

    fn patched(&self, inst: &TrajectoryInstance, patch: &Patch) -> Result<TrajectoryInstance, VerifyError> {
        let mut out = inst.clone();
        let (w, h) = (inst.image_size[0], inst.image_size[1]);
        for edit in &patch.boxes {
            let e = out
                .evidence
                .get_mut(edit.index)
                .ok_or_else(|| VerifyError::PatchInvalid(format!("evidence index {} out of range", edit.index)))?;
            e.bbox_norm =
                normalize_bbox(&edit.bbox_px, w, h).map_err(|err| VerifyError::PatchInvalid(err.to_string()))?;
            e.bbox_px = edit.bbox_px;
        }
        if let Some(a) = &patch.answer {
            out.answer = a.trim().to_string();
        }
        out.validate().map_err(VerifyError::PatchInvalid)?;
        Ok(out)
    }

    /// Trajectory JSON Lines for the surviving instances.
    pub fn to_jsonl(&self) -> String {
        self.instances.iter().map(|i| i.to_json_line() + "\n").collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    BoxPerturbation,
    NumericSubstitution,
    AnswerTampering,
}

impl Corruption {
    pub const ALL: [Corruption; 3] =
        [Corruption::BoxPerturbation, Corruption::NumericSubstitution, Corruption::AnswerTampering];
}

/// Applies a seeded corruption of the given kind, or `None` when the
/// instance offers nothing to corrupt that way (no stated numbers).
pub fn corrupt(
    inst: &TrajectoryInstance,
    spec: &TableSpec,
    map: &RegionMap,
    kind: Corruption,
    seed: u64,
) -> Option<TrajectoryInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = inst.clone();
    match kind {
        Corruption::BoxPerturbation => {
            let i = rng.random_range(0..out.evidence.len());
            let orig = out.evidence[i].bbox_px;
            for _ in 0..64 {
                let mut c = orig.as_array();
                let k = rng.random_range(0..4);
                let delta = rng.random_range(1..=5) * if rng.random_bool(0.5) { 1 } else { -1 };
                c[k] += delta;
                let Some(b) = BBox::new(c[0], c[1], c[2], c[3]) else { continue };
                if map.region_at(&b).is_some() {
                    continue;
                }
                out.evidence[i].bbox_px = b;
                if let Ok(n) = normalize_bbox(&b, map.image_w, map.image_h) {
                    out.evidence[i].bbox_norm = n;
                }
                return Some(out);
            }
            None
        }
        Corruption::NumericSubstitution => {
            let allowed = admissible_values(inst, spec, map);
            let sites: Vec<(usize, Literal)> = inst
                .steps
                .iter()
                .enumerate()
                .flat_map(|(si, s)| scan_literals(&s.text).into_iter().map(move |l| (si, l)))
                .collect();
            let (si, lit) = sites.choose(&mut rng)?.clone();
            let mut v = lit.value.abs() + Decimal::from(rng.random_range(1..=9));
            while allowed.iter().any(|a| approx_eq(*a, v)) {
                v += Decimal::from(rng.random_range(1..=97));
            }
            let text = &mut out.steps[si].text;
            text.replace_range(lit.start..lit.end, &format_decimal(v));
            Some(out)
        }
        Corruption::AnswerTampering => {
            out.answer = match inst.answer.as_str() {
                "yes" => "no".to_string(),
                "no" => "yes".to_string(),
                a => match a.parse::<Decimal>() {
                    Ok(v) => format_decimal(v + Decimal::from(rng.random_range(1..=9))),
                    Err(_) => format!("{a} ({})", rng.random_range(2..100)),
                },
            };
            Some(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_a;
    use crate::forge::{synthesize_instance, ArithOp, CellRef, TaskCategory};
    use crate::layout::{compute_layout, LayoutMetrics};

    fn setup() -> (TableSpec, RegionMap) {
        let spec = fixture_a();
        let map = compute_layout(&spec, &LayoutMetrics::default()).unwrap();
        (spec, map)
    }

    fn sum_instance(spec: &TableSpec, map: &RegionMap) -> TrajectoryInstance {
        let mut inst = synthesize_instance(spec, map, TaskCategory::Arithmetic, 0, "a.png").unwrap();
        let cells = vec![CellRef::new(0, 0), CellRef::new(0, 1)];
        inst.derivation = Derivation::Arith { arith: ArithOp::Sum, cells };
        inst.answer = "30".into();
        let tags = ["cell:Revenue>Q1@2020", "cell:Revenue>Q2@2020"].map(|t| t.parse().unwrap());
        let set = crate::resolve::resolve_evidence_set(&tags, spec, map).unwrap();
        inst.evidence = set
            .distinct()
            .into_iter()
            .map(|e| crate::forge::EvidenceRecord {
                bbox_norm: normalize_bbox(&e.bbox_px, map.image_w, map.image_h).unwrap(),
                tag: e.tag,
                label: e.label,
                bbox_px: e.bbox_px,
            })
            .collect();
        inst.tags = tags.to_vec();
        inst.steps = vec![crate::forge::ReasoningStep { text: "10 + 20 = 30".into(), boxes: vec![0, 1] }];
        inst
    }

    #[test]
    fn literal_scanner() {
        let lits: Vec<String> = scan_literals("Read \"Revenue>Q1\" at \"2020\": 10. Q3 is -5, (-2) a-3 x 1.25.")
            .into_iter()
            .map(|l| format_decimal(l.value))
            .collect();
        assert_eq!(lits, ["10", "-5", "-2", "3", "1.25"]);
    }

    #[test]
    fn spatial_examples() {
        let (spec, map) = setup();
        let clean = sum_instance(&spec, &map);
        assert!(check_spatial(&clean, &map).is_empty());
        let mut oob = clean.clone();
        oob.evidence[0].bbox_px = BBox::new_unchecked(160, 80, 280, 999);
        let f = check_spatial(&oob, &map);
        assert_eq!((f.len(), f[0].kind, f[0].evidence_index), (1, FlagKind::SpatialOutOfBounds, Some(0)));
        let mut off = clean.clone();
        off.evidence[0].bbox_px = BBox::new_unchecked(161, 80, 280, 120);
        assert_eq!(check_spatial(&off, &map)[0].kind, FlagKind::SpatialMisaligned);
    }

    #[test]
    fn logical_examples() {
        let (spec, map) = setup();
        let clean = sum_instance(&spec, &map);
        assert_eq!(check_logical(&clean, &spec, &map), vec![]);
        let mut bad = clean.clone();
        bad.steps[0].text = "10 + 20 = 25".into();
        let f = check_logical(&bad, &spec, &map);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, FlagKind::LogicalUnanchored);
        let mut wrong = clean.clone();
        wrong.answer = "31".into();
        assert_eq!(check_logical(&wrong, &spec, &map)[0].kind, FlagKind::AnswerInconsistent);
    }

    #[test]
    fn audit_sampling() {
        let ids: Vec<String> = (0..200).map(|i| format!("x{i}")).collect();
        let s = sample_audit(&ids, &[], 0.05, 3).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s, sample_audit(&ids, &[], 0.05, 3).unwrap());
        assert_eq!(sample_audit(&ids, &[], 1.0, 3).unwrap().len(), 200);
        assert_eq!(sample_audit(&ids, &[], 0.0, 3), Err(VerifyError::RateInvalid(0.0)));
        let with_flag = sample_audit(&ids, &["zzz".into()], 0.05, 3).unwrap();
        assert_eq!(with_flag.len(), 11);
    }

    fn decision(id: &str, action: ReviewAction, patch: Option<Patch>) -> ReviewDecision {
        ReviewDecision { instance_id: id.into(), action, patch, reviewer: "r".into(), timestamp: "2026-01-01T00:00:00Z".into() }
    }

    #[test]
    fn decisions() {
        let (spec, map) = setup();
        let mut off = sum_instance(&spec, &map);
        off.evidence[0].bbox_px = BBox::new_unchecked(161, 80, 280, 120);
        let id = off.id.clone();
        let mut corpus = Corpus::new(vec![off], vec![(spec, map)]);
        assert!(!corpus.verify_all().unwrap().is_empty());
        let fix = Patch { boxes: vec![BoxEdit { index: 0, bbox_px: BBox::new_unchecked(160, 80, 280, 120) }], answer: None };
        assert_eq!(corpus.apply_decision(decision(&id, ReviewAction::Modify, Some(fix))).unwrap(), vec![]);
        assert!(corpus.flags().is_empty());
        assert_eq!(
            corpus.apply_decision(decision("nope", ReviewAction::Drop, None)),
            Err(VerifyError::UnknownInstance("nope".into()))
        );
        assert!(corpus.apply_decision(decision(&id, ReviewAction::Modify, None)).is_err());
        corpus.apply_decision(decision(&id, ReviewAction::Drop, None)).unwrap();
        assert!(!corpus.to_jsonl().contains(&id));
        assert_eq!(corpus.log().len(), 2);
    }
}
