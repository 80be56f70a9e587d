//! Batch subcommands: render, forge, verify, eval, stats.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use tableforge_core::forge::{
    compute_stats, split_dataset, stats_from_rows, synthesize_instance, CategoryRow, DatasetManifest, ForgeError, Split,
    TrajectoryInstance,
};
use tableforge_core::layout::{compute_layout, RegionMap};
use tableforge_core::render::{encode_png, rasterize, render_image};
use tableforge_core::table::{load_spec_str, TableSpec};
use tableforge_core::verify::{sample_audit, Corpus, Flag};
use tableforge_runner::{
    run_pipeline, AnchoredReader, Mode, ModelBackend, OracleBackend, PipelineOptions, PromptSet, RemoteBackend,
    ReplayBackend, SplitBackend,
};

use crate::config::{BackendKind, RunConfig};
use crate::CliError;

pub const TRAJECTORIES: &str = "trajectories.jsonl";
pub const MANIFEST: &str = "manifest.json";
pub const STATS: &str = "stats.json";
pub const FLAGS: &str = "flags.jsonl";
pub const AUDIT_SAMPLE: &str = "audit_sample.json";
pub const AUDIT_LOG: &str = "audit_log.jsonl";
pub const RESULTS: &str = "results.jsonl";
pub const REPORT: &str = "report.json";

/// File stem for a table id, safe on every filesystem.
pub fn file_stem(table_id: &str) -> String {
    table_id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

pub fn image_ref(table_id: &str) -> String {
    format!("images/{}.png", file_stem(table_id))
}

fn images_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.out.join("images")
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, text)
}

/// Every `*.json` table spec under the configured directory, sorted by file
/// name. Schema problems name the file and position.
pub fn load_specs(cfg: &RunConfig) -> Result<Vec<TableSpec>, CliError> {
    let dir = &cfg.paths.specs;
    let entries = fs::read_dir(dir).map_err(|e| CliError::input(format!("spec directory {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::input(format!("no table specs (*.json) in {}", dir.display())));
    }
    let mut seen = HashSet::new();
    let mut specs = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| CliError::input(format!("{}: {e}", f.display())))?;
        let spec = load_spec_str(&text).map_err(|e| CliError::input(format!("{}: {e}", f.display())))?;
        if !seen.insert(file_stem(&spec.table_id)) {
            return Err(CliError::input(format!("{}: duplicate table_id {:?}", f.display(), spec.table_id)));
        }
        specs.push(spec);
    }
    Ok(specs)
}

#[derive(Debug, Clone, Serialize)]
pub struct RenderSummary {
    pub tables: usize,
    pub files: Vec<PathBuf>,
}

pub fn cmd_render(cfg: &RunConfig) -> Result<RenderSummary, CliError> {
    let specs = load_specs(cfg)?;
    let dir = images_dir(cfg);
    let render_one = |spec: &TableSpec| -> Result<Vec<(PathBuf, Vec<u8>)>, CliError> {
        let map = compute_layout(spec, &cfg.metrics).map_err(|e| CliError::input(format!("{}: {e}", spec.table_id)))?;
        let doc = render_image(spec, &map, &cfg.metrics);
        let png = rasterize(&doc, cfg.png_scale)
            .and_then(|img| encode_png(&img))
            .map_err(|e| CliError::input(format!("{}: {e}", spec.table_id)))?;
        let stem = file_stem(&spec.table_id);
        Ok(vec![
            (dir.join(format!("{stem}.svg")), doc.to_svg().into_bytes()),
            (dir.join(format!("{stem}.png")), png),
            (dir.join(format!("{stem}.regions.json")), (map.to_json() + "\n").into_bytes()),
        ])
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    let rendered: Vec<_> = pool.install(|| specs.par_iter().map(render_one).collect::<Result<_, _>>())?;
    let mut files = Vec::new();
    for (path, bytes) in rendered.into_iter().flatten() {
        write(&path, bytes)?;
        files.push(path);
    }
    Ok(RenderSummary { tables: specs.len(), files })
}

/// Tables with the region maps written by `render`.
pub fn load_rendered(cfg: &RunConfig) -> Result<Vec<(TableSpec, RegionMap)>, CliError> {
    let specs = load_specs(cfg)?;
    let dir = images_dir(cfg);
    specs
        .into_iter()
        .map(|spec| {
            let path = dir.join(format!("{}.regions.json", file_stem(&spec.table_id)));
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::input(format!("{}: {e} (run `tableforge render` first)", path.display())))?;
            let map: RegionMap =
                serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let fresh = compute_layout(&spec, &cfg.metrics).map_err(|e| CliError::input(e.to_string()))?;
            if fresh != map {
                return Err(CliError::input(format!("{} is stale; re-run `tableforge render`", path.display())));
            }
            Ok((spec, map))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ForgeSummary {
    pub instances: usize,
    pub train: usize,
    pub test: usize,
}

pub fn cmd_forge(cfg: &RunConfig) -> Result<ForgeSummary, CliError> {
    let seed = cfg.forge.seed.ok_or_else(|| CliError::input("forge needs a seed ([forge] seed or --seed)"))?;
    if cfg.forge.quotas.is_empty() {
        return Err(CliError::input("forge needs at least one category quota"));
    }
    let tables = load_rendered(cfg)?;
    let mut instances: Vec<TrajectoryInstance> = Vec::new();
    for (&category, &quota) in &cfg.forge.quotas {
        let mut questions = HashSet::new();
        let mut made = 0;
        let attempts = quota * cfg.forge.attempts_per_instance.max(1);
        for k in 0..attempts {
            if made == quota {
                break;
            }
            let (spec, map) = &tables[k % tables.len()];
            let s = seed.wrapping_add(k as u64);
            match synthesize_instance(spec, map, category, s, &image_ref(&spec.table_id)) {
                Ok(inst) => {
                    if questions.insert((inst.table_id.clone(), inst.question.clone())) {
                        instances.push(inst);
                        made += 1;
                    }
                }
                Err(ForgeError::CategoryInapplicable { .. }) => {}
                Err(e) => return Err(CliError::infeasible(format!("{category}: {e}"))),
            }
        }
        if made < quota {
            return Err(CliError::infeasible(format!(
                "quota for {category} unfillable: {made} of {quota} distinct instances after {attempts} attempts"
            )));
        }
    }
    let manifest = split_dataset(&DatasetManifest::from_instances(&instances), cfg.forge.split_ratio, seed)
        .map_err(|e| CliError::input(e.to_string()))?;
    let specs: Vec<TableSpec> = tables.into_iter().map(|(s, _)| s).collect();
    let stats = compute_stats(&instances, &specs).map_err(|e| CliError::infeasible(e.to_string()))?;
    let out = &cfg.paths.out;
    write(&out.join(TRAJECTORIES), jsonl(&instances))?;
    write_json(&out.join(MANIFEST), &manifest)?;
    write_json(&out.join(STATS), &stats)?;
    Ok(ForgeSummary {
        instances: instances.len(),
        train: manifest.ids(Split::Train).len(),
        test: manifest.ids(Split::Test).len(),
    })
}

pub fn jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("serializable") + "\n").collect()
}

pub fn load_instances(path: &Path) -> Result<Vec<TrajectoryInstance>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let instances = load_instances(&cfg.paths.out.join(TRAJECTORIES))?;
    let tables = load_rendered(cfg)?;
    let known: HashSet<&str> = tables.iter().map(|(s, _)| s.table_id.as_str()).collect();
    if let Some(i) = instances.iter().find(|i| !known.contains(i.table_id.as_str())) {
        return Err(CliError::input(format!("instance {} refers to unknown table {}", i.id, i.table_id)));
    }
    Ok(Corpus::new(instances, tables))
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    pub instances: usize,
    pub flags: Vec<Flag>,
    pub audit: Vec<String>,
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifySummary, CliError> {
    let mut corpus = load_corpus(cfg)?;
    let flags = corpus.verify_all().map_err(|e| CliError::input(e.to_string()))?;
    let ids: Vec<String> = corpus.instances().iter().map(|i| i.id.clone()).collect();
    let flagged: Vec<String> = corpus.flags().keys().cloned().collect();
    let audit = sample_audit(&ids, &flagged, cfg.verify.audit_rate, cfg.verify.audit_seed)
        .map_err(|e| CliError::input(e.to_string()))?;
    let out = &cfg.paths.out;
    write(&out.join(FLAGS), jsonl(&flags))?;
    write_json(
        &out.join(AUDIT_SAMPLE),
        &serde_json::json!({ "rate": cfg.verify.audit_rate, "seed": cfg.verify.audit_seed, "ids": audit }),
    )?;
    Ok(VerifySummary { instances: ids.len(), flags, audit })
}

fn build_backend(cfg: &RunConfig, tables: Vec<(TableSpec, RegionMap)>) -> Result<Box<dyn ModelBackend>, CliError> {
    let e = &cfg.eval;
    Ok(match e.backend {
        BackendKind::Oracle => Box::new(OracleBackend),
        BackendKind::AnchoredReader => Box::new(SplitBackend::new(Box::new(OracleBackend), Box::new(AnchoredReader::new(tables)))),
        BackendKind::Replay => {
            let path = e.replay.as_ref().ok_or_else(|| CliError::input("replay backend needs [eval] replay = <file>"))?;
            Box::new(ReplayBackend::load(path).map_err(|e| CliError::input(e.to_string()))?)
        }
        BackendKind::Remote => {
            let rc = e.remote.clone().ok_or_else(|| CliError::input("remote backend needs an [eval.remote] table"))?;
            Box::new(RemoteBackend::new(rc).map_err(|e| CliError::input(e.to_string()))?)
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub mode: Mode,
    pub instances: usize,
    pub accuracy: f64,
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalSummary, CliError> {
    let mode: Mode = cfg.eval.mode.parse().map_err(CliError::input)?;
    let out = &cfg.paths.out;
    let mut instances = load_instances(&out.join(TRAJECTORIES))?;
    if let Some(which) = &cfg.eval.split {
        let want = match which.as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(CliError::input(format!("unknown split {other:?}"))),
        };
        let path = out.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        instances.retain(|i| manifest.split.get(&i.id) == Some(&want));
    }
    let tables = load_rendered(cfg)?;
    let backend = build_backend(cfg, tables)?;
    let prompts = match &cfg.eval.prompts {
        Some(p) => PromptSet::load(p).map_err(|e| CliError::input(e.to_string()))?,
        None => PromptSet::default(),
    };
    let opts = PipelineOptions { prompts, jobs: cfg.jobs, image_root: Some(out.clone()) };
    let result = run_pipeline(&instances, backend.as_ref(), mode, &opts).map_err(|e| CliError::input(e.to_string()))?;
    write(&out.join(RESULTS), jsonl(&result.records))?;
    write_json(&out.join(REPORT), &serde_json::json!({ "mode": mode, "backend": backend.name(), "accuracy": result.report, "iou": result.iou }))?;
    Ok(EvalSummary { mode, instances: result.records.len(), accuracy: result.report.overall.accuracy })
}

/// Statistics over the forged corpus, or over category summary rows when
/// `rows` names a JSON file of `{category, count, avg_bbox, avg_steps}`.
pub fn cmd_stats(cfg: &RunConfig, rows: Option<&Path>) -> Result<serde_json::Value, CliError> {
    let report = match rows {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let rows: Vec<CategoryRow> =
                serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            stats_from_rows(&rows).map_err(|e| CliError::input(e.to_string()))?
        }
        None => {
            let instances = load_instances(&cfg.paths.out.join(TRAJECTORIES))?;
            let specs = load_specs(cfg)?;
            compute_stats(&instances, &specs).map_err(|e| CliError::input(e.to_string()))?
        }
    };
    Ok(serde_json::to_value(report).expect("serializable"))
}

/// Parses `Category=N` quota overrides.
pub fn parse_quota(s: &str) -> Result<(tableforge_core::forge::TaskCategory, usize), String> {
    let (name, n) = s.rsplit_once('=').ok_or_else(|| format!("expected CATEGORY=N, got {s:?}"))?;
    let n = n.trim().parse().map_err(|_| format!("bad count in {s:?}"))?;
    Ok((name.parse()?, n))
}
