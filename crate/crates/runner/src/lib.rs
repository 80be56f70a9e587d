//! Locate-then-reason evaluation harness: stage-1 grounding, stage-2
//! anchored answering, oracle and end-to-end baselines over pluggable model
//! backends.

mod backend;
mod pipeline;
mod prompts;
mod trend;

use std::time::Duration;

use thiserror::Error;

pub use backend::{
    AnchoredReader, BackendError, ModelBackend, OracleBackend, RemoteBackend, RemoteConfig, ReplayBackend, ReplayEntry,
    SplitBackend, Stage, StageRequest,
};
pub use pipeline::{
    extract_answer, gt_anchor_lines, run_pipeline, run_stage1, run_stage2, Mode, PipelineOptions, PipelineOutput,
    RunRecord, StageOneResult, Timing,
};
pub use prompts::PromptSet;
pub use trend::{correlate_runs, RunPoint, Trend};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("correlation needs at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("no instances to run")]
    EmptyInput,
}

pub(crate) fn millis(d: Duration) -> u64 {
    d.as_millis().min(u64::MAX as u128) as u64
}
