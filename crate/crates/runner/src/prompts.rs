use std::path::Path;

use serde::Deserialize;

use crate::RunError;

const DEFAULT: &str = include_str!("../prompts/v1.toml");

/// Prompt templates. `{question}` and `{anchors}` are substituted verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PromptSet {
    pub version: String,
    pub stage1: String,
    pub stage2: String,
    pub end_to_end: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::parse(DEFAULT).expect("bundled prompts parse")
    }
}

impl PromptSet {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        let p: PromptSet = toml::from_str(text).map_err(|e| RunError::Config(format!("prompt file: {e}")))?;
        if !p.stage1.contains("{question}") || !p.stage2.contains("{question}") || !p.end_to_end.contains("{question}") {
            return Err(RunError::Config("every prompt must contain {question}".into()));
        }
        if !p.stage2.contains("{anchors}") {
            return Err(RunError::Config("the stage-2 prompt must contain {anchors}".into()));
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        PromptSet::parse(&text)
    }

    pub fn stage1_prompt(&self, question: &str) -> String {
        self.stage1.replace("{question}", question)
    }

    pub fn stage2_prompt(&self, question: &str, anchors: &str) -> String {
        self.stage2.replace("{anchors}", anchors).replace("{question}", question)
    }

    pub fn end_to_end_prompt(&self, question: &str) -> String {
        self.end_to_end.replace("{question}", question)
    }
}
