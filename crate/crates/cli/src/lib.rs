//! The `tableforge` command line and the review service behind it.
//!
//! Exit codes: 0 success, 1 verification findings, 2 input error,
//! 3 synthesis infeasible, 4 service startup failure.

pub mod commands;
pub mod config;
pub mod serve;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tableforge_core::forge::TaskCategory;

pub use config::{RunConfig, CONFIG_ENV};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn findings(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn infeasible(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }

    pub fn service(message: impl Into<String>) -> Self {
        CliError { code: 4, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(name = "tableforge", version, about = "Grounded table reasoning: render, forge, verify, evaluate, review")]
pub struct Cli {
    /// Config file (TOML). Defaults to $TABLEFORGE_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory of table spec JSON files.
    #[arg(long, global = true)]
    pub specs: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallelism bound for batch work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render every table spec to SVG, PNG and a region-map sidecar.
    Render,
    /// Synthesize trajectory instances, split them and write statistics.
    Forge(ForgeArgs),
    /// Check every instance; exits 1 when anything is flagged.
    Verify(VerifyArgs),
    /// Run the answering pipeline and score it.
    Eval(EvalArgs),
    /// Print dataset statistics as JSON.
    Stats(StatsArgs),
    /// Serve the review API and UI.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ForgeArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// CATEGORY=N; repeatable. Replaces the configured quotas.
    #[arg(long = "quota", value_parser = commands::parse_quota)]
    pub quotas: Vec<(TaskCategory, usize)>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub audit_rate: Option<f64>,
    #[arg(long)]
    pub audit_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// two_stage, oracle or end_to_end.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<config::BackendKind>,
    /// Replay file (JSON Lines of {id, stage, text}).
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Evaluate only the train or test split.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// JSON array of category rows to aggregate instead of the corpus.
    #[arg(long)]
    pub rows: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

/// Loads the config and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(p) = &cli.specs {
        cfg.paths.specs = p.clone();
    }
    if let Some(p) = &cli.out {
        cfg.paths.out = p.clone();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    match &cli.command {
        Command::Forge(a) => {
            if a.seed.is_some() {
                cfg.forge.seed = a.seed;
            }
            if !a.quotas.is_empty() {
                cfg.forge.quotas = a.quotas.iter().copied().collect();
            }
            if let Some(r) = a.split_ratio {
                cfg.forge.split_ratio = r;
            }
        }
        Command::Verify(a) => {
            if let Some(r) = a.audit_rate {
                cfg.verify.audit_rate = r;
            }
            if let Some(s) = a.audit_seed {
                cfg.verify.audit_seed = s;
            }
        }
        Command::Eval(a) => {
            if let Some(m) = &a.mode {
                cfg.eval.mode = m.clone();
            }
            if let Some(b) = a.backend {
                cfg.eval.backend = b;
            }
            if a.replay.is_some() {
                cfg.eval.replay = a.replay.clone();
            }
            if a.prompts.is_some() {
                cfg.eval.prompts = a.prompts.clone();
            }
            if a.split.is_some() {
                cfg.eval.split = a.split.clone();
            }
        }
        Command::Serve(a) => {
            if let Some(h) = &a.host {
                cfg.serve.host = h.clone();
            }
            if let Some(p) = a.port {
                cfg.serve.port = p;
            }
            if a.ui_dir.is_some() {
                cfg.serve.ui_dir = a.ui_dir.clone();
            }
        }
        Command::Render | Command::Stats(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Render => print_json(&commands::cmd_render(&cfg)?),
        Command::Forge(_) => print_json(&commands::cmd_forge(&cfg)?),
        Command::Verify(_) => {
            let summary = commands::cmd_verify(&cfg)?;
            print_json(&serde_json::json!({
                "instances": summary.instances,
                "flags": summary.flags.len(),
                "audit_sample": summary.audit.len(),
            }));
            if !summary.flags.is_empty() {
                return Ok(CliError::findings("").code);
            }
        }
        Command::Eval(_) => print_json(&commands::cmd_eval(&cfg)?),
        Command::Stats(a) => print_json(&commands::cmd_stats(&cfg, a.rows.as_deref())?),
        Command::Serve(_) => serve::run_blocking(&cfg)?,
    }
    Ok(0)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
