//! Core of the table-grounding workbench: table model, layout and rendering,
//! the semantic tag language, evidence resolution, instance synthesis,
//! verification and evaluation metrics.

pub mod eval;
pub mod fixtures;
pub mod forge;
pub mod layout;
pub mod numeric;
pub mod render;
pub mod resolve;
pub mod synth;
pub mod table;
pub mod tag;
pub mod verify;
