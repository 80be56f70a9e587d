//! Run configuration: a TOML file, optionally named by `TABLEFORGE_CONFIG`,
//! with command-line flags taking precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tableforge_core::forge::TaskCategory;
use tableforge_core::layout::LayoutMetrics;
use tableforge_runner::RemoteConfig;

use crate::CliError;

pub const CONFIG_ENV: &str = "TABLEFORGE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub metrics: LayoutMetrics,
    /// Raster scale factor for PNG output.
    pub png_scale: u32,
    pub forge: ForgeConfig,
    pub verify: VerifyConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            metrics: LayoutMetrics::default(),
            png_scale: 1,
            forge: ForgeConfig::default(),
            verify: VerifyConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
            jobs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub specs: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { specs: PathBuf::from("specs"), out: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    /// Required by forge; there is no implicit seed.
    pub seed: Option<u64>,
    pub quotas: BTreeMap<TaskCategory, usize>,
    /// Training fraction of each category.
    pub split_ratio: f64,
    /// Synthesis attempts allowed per requested instance before a quota is
    /// declared unfillable.
    pub attempts_per_instance: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig { seed: None, quotas: BTreeMap::new(), split_ratio: 0.8, attempts_per_instance: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub audit_rate: f64,
    pub audit_seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { audit_rate: 0.05, audit_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Ground truth for both stages.
    Oracle,
    /// Ground-truth boxes for stage 1, the anchored cell reader for stage 2.
    AnchoredReader,
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// two_stage, oracle or end_to_end; validated when the command runs.
    pub mode: String,
    pub backend: BackendKind,
    pub replay: Option<PathBuf>,
    pub remote: Option<RemoteConfig>,
    pub prompts: Option<PathBuf>,
    /// Restrict evaluation to one split ("train" or "test").
    pub split: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: "two_stage".into(),
            backend: BackendKind::Oracle,
            replay: None,
            remote: None,
            prompts: None,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    /// Directory of built review UI assets, served at "/".
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig { host: "127.0.0.1".into(), port: 8080, ui_dir: None }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::input(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `explicit`, else the file named by the environment variable,
    /// else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
                let mut cfg = RunConfig::parse(&text, &p)?;
                cfg.rebase(p.parent().unwrap_or(Path::new(".")));
                Ok(cfg)
            }
            None => Ok(RunConfig::default()),
        }
    }

    /// Resolves relative paths in the file against the file's directory.
    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.paths.specs);
        fix(&mut self.paths.out);
        for p in [&mut self.eval.replay, &mut self.eval.prompts, &mut self.serve.ui_dir].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.png_scale == 0 {
            return Err(CliError::input("png_scale must be at least 1"));
        }
        if self.jobs == 0 {
            return Err(CliError::input("jobs must be at least 1"));
        }
        if !(self.forge.split_ratio > 0.0 && self.forge.split_ratio < 1.0) {
            return Err(CliError::input(format!("split_ratio {} must lie strictly between 0 and 1", self.forge.split_ratio)));
        }
        Ok(())
    }
}
