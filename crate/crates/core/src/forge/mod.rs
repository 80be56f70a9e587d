//! Benchmark construction: task taxonomy, answer derivation, instance
//! synthesis, dataset splitting and complexity statistics.

mod dataset;
mod derive;
mod instance;
mod stats;
mod taxonomy;

use thiserror::Error;

pub use dataset::{split_dataset, DatasetManifest, ManifestEntry, Split};
pub use derive::{axis_label, compute_answer, derive, AnswerError, ArithOp, CellRef, Derivation, Outcome, NO_MATCH};
pub use instance::{
    instance_id, synthesize_instance, temporal_key, EvidenceRecord, ReasoningStep, TrajectoryInstance,
};
pub(crate) use instance::seeded_shuffle;
pub use stats::{compute_stats, stats_from_rows, Aggregate, CategoryRow, LevelRow, ShapeStats, StatsReport, TextStats};
pub use taxonomy::{Level, TaskCategory};

use crate::eval::EvalError;
use crate::resolve::ResolveError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForgeError {
    #[error("{category} does not apply to this table: {reason}")]
    CategoryInapplicable { category: TaskCategory, reason: String },
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("internal synthesis error: {0}")]
    Internal(String),
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    RatioInvalid(f64),
    #[error("no instances or rows to summarize")]
    EmptyManifest,
}
