use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use tableforge_core::eval::{denormalize_bbox, iou, parse_grounding_output};
use tableforge_core::forge::TrajectoryInstance;
use tableforge_core::layout::{LabelType, RegionMap};
use tableforge_core::table::TableSpec;
use thiserror::Error;

use crate::pipeline::gt_anchor_lines;
use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    One,
    Two,
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => Err(format!("stage must be 1 or 2, got {v}")),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        match s {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no response recorded for {id} stage {stage}")]
    Missing { id: String, stage: u8 },
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// One model call. End-to-end requests are stage 2 without anchors.
#[derive(Debug, Clone)]
pub struct StageRequest<'a> {
    pub instance: &'a TrajectoryInstance,
    pub stage: Stage,
    pub prompt: String,
    pub anchors: Option<&'a str>,
    pub image_png: Option<&'a [u8]>,
}

pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, req: &StageRequest<'_>) -> Result<String, BackendError>;

    /// Whether requests must carry the rendered PNG.
    fn needs_image(&self) -> bool {
        false
    }
}

/// Answers from the instance's own ground truth: evidence boxes for stage 1,
/// the stored answer for stage 2.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend;

impl ModelBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn complete(&self, req: &StageRequest<'_>) -> Result<String, BackendError> {
        Ok(match req.stage {
            Stage::One => {
                let lines: Vec<String> = gt_anchor_lines(req.instance).iter().map(ToString::to_string).collect();
                format!("Ground-truth evidence.\n{}", lines.join("\n"))
            }
            Stage::Two => format!("Answer: {}", req.instance.answer),
        })
    }
}

/// Deterministic stage-2 reader: maps the first `[cell]` anchor back onto the
/// rendered table and reports that cell's text.
#[derive(Debug, Clone, Default)]
pub struct AnchoredReader {
    tables: HashMap<String, (TableSpec, RegionMap)>,
}

impl AnchoredReader {
    pub fn new(tables: impl IntoIterator<Item = (TableSpec, RegionMap)>) -> Self {
        AnchoredReader { tables: tables.into_iter().map(|(s, m)| (s.table_id.clone(), (s, m))).collect() }
    }
}

impl ModelBackend for AnchoredReader {
    fn name(&self) -> &str {
        "anchored-reader"
    }

    fn complete(&self, req: &StageRequest<'_>) -> Result<String, BackendError> {
        if req.stage != Stage::Two {
            return Err(BackendError::Protocol("the anchored reader only answers stage 2".into()));
        }
        let (spec, map) = self
            .tables
            .get(&req.instance.table_id)
            .ok_or_else(|| BackendError::Protocol(format!("unknown table {}", req.instance.table_id)))?;
        let anchors = req.anchors.unwrap_or_default();
        let Ok(parsed) = parse_grounding_output(anchors) else {
            return Ok("No usable anchors.\nAnswer: unknown".into());
        };
        let Some(line) = parsed.lines.iter().find(|l| l.label == LabelType::Cell) else {
            return Ok("No cell anchor.\nAnswer: unknown".into());
        };
        let px = denormalize_bbox(&line.bbox, map.image_w, map.image_h);
        let best = map
            .regions()
            .iter()
            .filter(|r| r.label == LabelType::Cell)
            .map(|r| (iou(&r.bbox, &px), r))
            .filter(|(v, _)| *v >= 0.5)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        let Some((_, region)) = best else {
            return Ok("Anchor matches no cell.\nAnswer: unknown".into());
        };
        let tableforge_core::layout::GridRef::Cell { row, col } = region.grid else {
            return Ok("Answer: unknown".into());
        };
        let value = spec.cell(row, col).map(|c| c.display()).unwrap_or_default();
        Ok(format!("Read the anchored cell.\nAnswer: {value}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub id: String,
    pub stage: Stage,
    pub text: String,
}

/// Recorded responses keyed by (instance id, stage).
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<(String, Stage), String>,
}

impl ReplayBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        ReplayBackend { responses: entries.into_iter().map(|e| ((e.id, e.stage), e.text)).collect() }
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, RunError> {
        Self::read(text.as_bytes(), "<replay>")
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let f = std::fs::File::open(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::read(std::io::BufReader::new(f), &path.display().to_string())
    }

    fn read(r: impl BufRead, name: &str) -> Result<Self, RunError> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| RunError::Config(format!("{name}: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry =
                serde_json::from_str(&line).map_err(|e| RunError::Config(format!("{name}:{}: {e}", i + 1)))?;
            entries.push(e);
        }
        Ok(Self::from_entries(entries))
    }
}

impl ModelBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, req: &StageRequest<'_>) -> Result<String, BackendError> {
        self.responses
            .get(&(req.instance.id.clone(), req.stage))
            .cloned()
            .ok_or_else(|| BackendError::Missing { id: req.instance.id.clone(), stage: req.stage.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Extra attempts after the first failure.
    #[serde(default)]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    60_000
}

/// HTTP backend: POST {"stage", "question", "image", "anchors"} and read
/// {"text"} back.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    stage: Stage,
    question: &'a str,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    anchors: Option<&'a str>,
}

#[derive(Deserialize)]
struct RemoteResponse {
    text: String,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, RunError> {
        if cfg.timeout_ms == 0 {
            return Err(RunError::Config("remote timeout must be positive".into()));
        }
        if !(cfg.endpoint.starts_with("http://") || cfg.endpoint.starts_with("https://")) {
            return Err(RunError::Config(format!("remote endpoint {:?} is not an http(s) URL", cfg.endpoint)));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackend { cfg, agent })
    }

    fn attempt(&self, body: &RemoteRequest<'_>) -> Result<String, (bool, BackendError)> {
        let mut resp = match self.agent.post(&self.cfg.endpoint).send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err((true, BackendError::Timeout { attempts: 1 })),
            Err(e) => return Err((true, BackendError::Transport(e.to_string()))),
        };
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err((true, BackendError::Transport(format!("server answered {status}"))));
        }
        if status >= 400 {
            return Err((false, BackendError::Protocol(format!("server answered {status}"))));
        }
        match resp.body_mut().read_json::<RemoteResponse>() {
            Ok(r) => Ok(r.text),
            Err(ureq::Error::Timeout(_)) => Err((true, BackendError::Timeout { attempts: 1 })),
            Err(e) => Err((false, BackendError::Protocol(format!("bad response body: {e}")))),
        }
    }
}

impl ModelBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn needs_image(&self) -> bool {
        true
    }

    fn complete(&self, req: &StageRequest<'_>) -> Result<String, BackendError> {
        let body = RemoteRequest {
            stage: req.stage,
            question: &req.instance.question,
            prompt: &req.prompt,
            image: req.image_png.map(|b| base64::engine::general_purpose::STANDARD.encode(b)),
            anchors: req.anchors,
        };
        let attempts = self.cfg.retries + 1;
        let mut last = BackendError::Transport("no attempt made".into());
        for _ in 0..attempts {
            match self.attempt(&body) {
                Ok(t) => return Ok(t),
                Err((retry, e)) => {
                    last = e;
                    if !retry {
                        break;
                    }
                }
            }
        }
        Err(match last {
            BackendError::Timeout { .. } => BackendError::Timeout { attempts },
            e => e,
        })
    }
}

/// Routes stage 1 and stage 2 to different backends.
pub struct SplitBackend {
    pub stage1: Box<dyn ModelBackend>,
    pub stage2: Box<dyn ModelBackend>,
    name: String,
}

impl SplitBackend {
    pub fn new(stage1: Box<dyn ModelBackend>, stage2: Box<dyn ModelBackend>) -> Self {
        let name = format!("{}+{}", stage1.name(), stage2.name());
        SplitBackend { stage1, stage2, name }
    }
}

impl ModelBackend for SplitBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn needs_image(&self) -> bool {
        self.stage1.needs_image() || self.stage2.needs_image()
    }

    fn complete(&self, req: &StageRequest<'_>) -> Result<String, BackendError> {
        match req.stage {
            Stage::One => self.stage1.complete(req),
            Stage::Two => self.stage2.complete(req),
        }
    }
}
