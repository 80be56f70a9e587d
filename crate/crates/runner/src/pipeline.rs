use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tableforge_core::eval::{
    aggregate, answers_match, format_grounding_lines, iou_summary, match_boxes, parse_grounding_output, AccuracyReport,
    EvalError, GroundingLine, IoUSummary, RejectedLine, ScoredResult,
};
use tableforge_core::forge::{Level, TaskCategory, TrajectoryInstance};

use crate::backend::{BackendError, ModelBackend, Stage, StageRequest};
use crate::{millis, PromptSet, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TwoStage,
    Oracle,
    EndToEnd,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::TwoStage => "two_stage",
            Mode::Oracle => "oracle",
            Mode::EndToEnd => "end_to_end",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "two_stage" | "two-stage" => Ok(Mode::TwoStage),
            "oracle" => Ok(Mode::Oracle),
            "end_to_end" | "end-to-end" => Ok(Mode::EndToEnd),
            other => Err(format!("unknown mode {other:?}; expected two_stage, oracle or end_to_end")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneResult {
    pub reason: String,
    pub lines: Vec<GroundingLine>,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<RejectedLine>,
    /// IoU of each matched predicted/ground-truth pair, normalized space.
    #[serde(default)]
    pub iou_pairs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub stage1_ms: u64,
    pub stage2_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub mode: Mode,
    pub category: TaskCategory,
    pub level: Level,
    pub n_gt_boxes: usize,
    pub gold_answer: String,
    pub pred_answer: Option<String>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1: Option<StageOneResult>,
    /// Anchor block sent to stage 2; absent in end-to-end mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<String>,
    /// True when the anchors are ground truth rather than predictions.
    #[serde(default)]
    pub gt_anchors: bool,
    pub stage2_raw: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    pub timing: Timing,
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub prompts: PromptSet,
    /// Upper bound on concurrently processed instances.
    pub jobs: usize,
    /// Directory that instance image paths are relative to; images are only
    /// read for backends that need them.
    pub image_root: Option<PathBuf>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { prompts: PromptSet::default(), jobs: 4, image_root: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub records: Vec<RunRecord>,
    pub report: AccuracyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<IoUSummary>,
}

/// Ground-truth evidence as grounding lines, in evidence order.
pub fn gt_anchor_lines(inst: &TrajectoryInstance) -> Vec<GroundingLine> {
    inst.evidence.iter().map(|e| GroundingLine { label: e.label, bbox: e.bbox_norm }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageFailure {
    Backend(BackendError),
    /// Stage 1 produced no parseable line; the partial result is kept.
    NoValidLines(StageOneResult),
    /// Stage 2 text lacks an "Answer:" marker.
    AnswerMissing { raw: String },
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageFailure::Backend(e) => write!(f, "{e}"),
            StageFailure::NoValidLines(_) => f.write_str("no valid grounding lines"),
            StageFailure::AnswerMissing { .. } => f.write_str("answer marker missing"),
        }
    }
}

/// Text after the last "Answer:" marker (case-insensitive), up to the end of
/// that line.
pub fn extract_answer(text: &str) -> Option<String> {
    const MARKER: &str = "answer:";
    text.lines().rev().find_map(|line| {
        let at = line.to_ascii_lowercase().rfind(MARKER)?;
        let rest = line[at + MARKER.len()..].trim();
        (!rest.is_empty()).then(|| rest.to_string())
    })
}

pub fn run_stage1(
    inst: &TrajectoryInstance,
    backend: &dyn ModelBackend,
    prompts: &PromptSet,
    image_png: Option<&[u8]>,
) -> Result<StageOneResult, StageFailure> {
    let req = StageRequest { instance: inst, stage: Stage::One, prompt: prompts.stage1_prompt(&inst.question), anchors: None, image_png };
    let raw = backend.complete(&req).map_err(StageFailure::Backend)?;
    let gt = gt_anchor_lines(inst);
    match parse_grounding_output(&raw) {
        Ok(out) => {
            let preds: Vec<_> = out.lines.iter().map(|l| l.bbox).collect();
            let gts: Vec<_> = gt.iter().map(|l| l.bbox).collect();
            let iou_pairs = match_boxes(&preds, &gts).pairs.iter().map(|p| p.iou).collect();
            Ok(StageOneResult { reason: out.reason, lines: out.lines, raw, rejected: out.rejected, iou_pairs })
        }
        Err(EvalError::NoValidLines { reason, rejected }) => {
            Err(StageFailure::NoValidLines(StageOneResult { reason, lines: Vec::new(), raw, rejected, iou_pairs: Vec::new() }))
        }
        Err(e) => Err(StageFailure::Backend(BackendError::Protocol(e.to_string()))),
    }
}

/// Runs stage 2 with an anchor block, or end-to-end when `anchors` is None.
/// Returns the extracted answer and the full response.
pub fn run_stage2(
    inst: &TrajectoryInstance,
    anchors: Option<&str>,
    backend: &dyn ModelBackend,
    prompts: &PromptSet,
    image_png: Option<&[u8]>,
) -> Result<(String, String), StageFailure> {
    let prompt = match anchors {
        Some(a) => prompts.stage2_prompt(&inst.question, a),
        None => prompts.end_to_end_prompt(&inst.question),
    };
    let req = StageRequest { instance: inst, stage: Stage::Two, prompt, anchors, image_png };
    let raw = backend.complete(&req).map_err(StageFailure::Backend)?;
    match extract_answer(&raw) {
        Some(a) => Ok((a, raw)),
        None => Err(StageFailure::AnswerMissing { raw }),
    }
}

fn run_one(inst: &TrajectoryInstance, backend: &dyn ModelBackend, mode: Mode, opts: &PipelineOptions) -> RunRecord {
    let mut errors = Vec::new();
    let image = match (&opts.image_root, backend.needs_image()) {
        (Some(root), true) => match std::fs::read(root.join(&inst.image)) {
            Ok(b) => Some(b),
            Err(e) => {
                errors.push(format!("image {}: {e}", inst.image));
                None
            }
        },
        _ => None,
    };
    let image = image.as_deref();
    let mut timing = Timing::default();
    let (stage1, anchors, gt_anchors) = match mode {
        Mode::EndToEnd => (None, None, false),
        Mode::Oracle => (None, Some(format_grounding_lines(&gt_anchor_lines(inst))), true),
        Mode::TwoStage => {
            let t = Instant::now();
            let r = run_stage1(inst, backend, &opts.prompts, image);
            timing.stage1_ms = millis(t.elapsed());
            match r {
                Ok(s1) => {
                    let a = format_grounding_lines(&s1.lines);
                    (Some(s1), Some(a), false)
                }
                Err(StageFailure::NoValidLines(s1)) => {
                    errors.push("stage 1: no valid grounding lines".into());
                    (Some(s1), Some(String::new()), false)
                }
                Err(e) => {
                    errors.push(format!("stage 1: {e}"));
                    (None, Some(String::new()), false)
                }
            }
        }
    };
    let t = Instant::now();
    let r = run_stage2(inst, anchors.as_deref(), backend, &opts.prompts, image);
    timing.stage2_ms = millis(t.elapsed());
    let (pred_answer, stage2_raw) = match r {
        Ok((a, raw)) => (Some(a), raw),
        Err(StageFailure::AnswerMissing { raw }) => {
            errors.push("stage 2: answer marker missing".into());
            (None, raw)
        }
        Err(e) => {
            errors.push(format!("stage 2: {e}"));
            (None, String::new())
        }
    };
    let correct = pred_answer.as_deref().is_some_and(|p| answers_match(p, &inst.answer));
    RunRecord {
        id: inst.id.clone(),
        mode,
        category: inst.category,
        level: inst.level,
        n_gt_boxes: inst.total_boxes(),
        gold_answer: inst.answer.clone(),
        pred_answer,
        correct,
        stage1,
        anchors,
        gt_anchors,
        stage2_raw,
        errors,
        timing,
    }
}

/// Runs every instance under `mode` with bounded parallelism. Per-instance
/// failures are recorded on the instance's record; records are ordered by id.
pub fn run_pipeline(
    instances: &[TrajectoryInstance],
    backend: &dyn ModelBackend,
    mode: Mode,
    opts: &PipelineOptions,
) -> Result<PipelineOutput, RunError> {
    if opts.jobs == 0 {
        return Err(RunError::Config("jobs must be at least 1".into()));
    }
    if instances.is_empty() {
        return Err(RunError::EmptyInput);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
    let mut records: Vec<RunRecord> =
        pool.install(|| instances.par_iter().map(|i| run_one(i, backend, mode, opts)).collect());
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let scored: Vec<ScoredResult> = records
        .iter()
        .map(|r| ScoredResult { id: r.id.clone(), category: r.category, level: r.level, n_gt_boxes: r.n_gt_boxes, correct: r.correct })
        .collect();
    let report = aggregate(&scored).map_err(|_| RunError::EmptyInput)?;
    let pairs: Vec<f64> = records.iter().filter_map(|r| r.stage1.as_ref()).flat_map(|s| s.iou_pairs.iter().copied()).collect();
    let iou = iou_summary(&pairs).ok();
    Ok(PipelineOutput { records, report, iou })
}
