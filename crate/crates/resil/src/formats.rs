//! On-disk artifact formats: JSON bundles for reloading between CLI stages,
//! CSV/JSONL exports with fixed column orders for external tools.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mii_resil_core::datagen::{GroundTruthModel, MachineSource};
use mii_resil_core::diagnosis::CvReport;
use mii_resil_core::domain::{ComputationTask, MTSSample, RuntimeTrace, CHANNELS, RUNTIME_CHANNELS};
use mii_resil_core::experiment::{CyberReport, DataArtifacts, EpisodeDemo, ExperimentRun, ScenarioPlan, PUBLISHED_DIAGNOSIS_F1, PUBLISHED_CYBER_F1};
use mii_resil_core::nn::{export_params, ParamMap};
use mii_resil_core::pipeline::{Deployment, TrainedPipeline};
use mii_resil_core::testbed::Event;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Base corpus, baseline and per-machine ground truth without the five
/// copies of the base corpus that [`MachineSource`] carries in memory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataBundle {
    pub base: Vec<MTSSample>,
    pub baseline: TrainedPipeline,
    pub ground_truth: Vec<GroundTruthModel>,
}

impl From<&DataArtifacts> for DataBundle {
    fn from(d: &DataArtifacts) -> Self {
        Self { base: d.base.clone(), baseline: d.baseline.clone(), ground_truth: d.sources.iter().map(|s| s.ground_truth.clone()).collect() }
    }
}

impl From<DataBundle> for DataArtifacts {
    fn from(b: DataBundle) -> Self {
        let sources = b
            .ground_truth
            .into_iter()
            .map(|gt| MachineSource { machine_id: gt.machine_id, base: b.base.clone(), ground_truth: gt })
            .collect();
        DataArtifacts { base: b.base, baseline: b.baseline, sources }
    }
}

/// One row per sample per timestamp: `sample_id,t,c0..c9,label`.
pub fn corpus_csv(samples: &[MTSSample]) -> String {
    let mut out = String::from("sample_id,t");
    for c in 0..CHANNELS {
        let _ = write!(out, ",c{c}");
    }
    out.push_str(",label\n");
    for s in samples {
        let label = if s.label.as_class() == 1 { "nonconforming" } else { "conforming" };
        for t in 0..s.len {
            let _ = write!(out, "{},{t}", s.id);
            for c in 0..CHANNELS {
                let _ = write!(out, ",{}", s.channel(c)[t]);
            }
            let _ = writeln!(out, ",{label}");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub file: String,
    pub samples: usize,
    pub series_len: usize,
    pub channels: usize,
    pub nonconforming: usize,
    pub seed: u64,
    pub sha256: String,
}

pub fn corpus_manifest(file: &str, samples: &[MTSSample], seed: u64, csv: &str) -> CorpusManifest {
    CorpusManifest {
        file: file.into(),
        samples: samples.len(),
        series_len: samples.first().map_or(0, |s| s.len),
        channels: CHANNELS,
        nonconforming: samples.iter().filter(|s| s.label.as_class() == 1).count(),
        seed,
        sha256: sha256_hex(csv.as_bytes()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployedPipelineEntry {
    pub config_id: usize,
    pub config: mii_resil_core::pipeline::PipelineConfig,
    pub validation_score: f64,
    pub params: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentManifestEntry {
    pub machine_id: u8,
    pub provenance: u8,
    pub pipelines: Vec<DeployedPipelineEntry>,
}

/// Manifest entries plus the parameter map behind each referenced file.
pub fn deployment_manifest(dep: &Deployment) -> (Vec<DeploymentManifestEntry>, Vec<(String, ParamMap)>) {
    let mut files = Vec::new();
    let entries = dep
        .machines
        .iter()
        .map(|m| DeploymentManifestEntry {
            machine_id: m.machine_id,
            provenance: m.provenance,
            pipelines: m
                .pipelines
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let name = format!("params/m{}_p{}.json", m.machine_id, k);
                    files.push((name.clone(), export_params(&mut p.classifier.clone(), "classifier")));
                    DeployedPipelineEntry { config_id: p.config.id, config: p.config.clone(), validation_score: p.validation_score, params: name }
                })
                .collect(),
        })
        .collect();
    (entries, files)
}

/// A task together with the runtime trace that the core type keeps out of
/// its serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: ComputationTask,
    pub trace: Option<RuntimeTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBundle {
    pub plans: Vec<ScenarioPlan>,
    pub tasks: Vec<TaskRecord>,
    pub events: Vec<Event>,
}

impl From<&ExperimentRun> for RunBundle {
    fn from(r: &ExperimentRun) -> Self {
        Self {
            plans: r.plans.clone(),
            tasks: r.tasks.iter().map(|t| TaskRecord { task: t.clone(), trace: t.runtime.clone() }).collect(),
            events: r.events.clone(),
        }
    }
}

impl From<RunBundle> for ExperimentRun {
    fn from(b: RunBundle) -> Self {
        let tasks = b
            .tasks
            .into_iter()
            .map(|r| {
                let mut t = r.task;
                t.runtime = r.trace;
                t
            })
            .collect();
        ExperimentRun { plans: b.plans, tasks, events: b.events }
    }
}

/// One JSON object per task in task order, traces included.
pub fn task_log(tasks: &[ComputationTask]) -> Result<String> {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&serde_json::to_string(&TaskRecord { task: t.clone(), trace: t.runtime.clone() })?);
        out.push('\n');
    }
    Ok(out)
}

pub fn task_log_digest(tasks: &[ComputationTask]) -> Result<String> {
    Ok(sha256_hex(task_log(tasks)?.as_bytes()))
}

pub fn events_jsonl(events: &[Event]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_events_jsonl(path: &Path) -> Result<Vec<Event>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|(i, l)| Ok(serde_json::from_str(&l?).with_context(|| format!("{} line {}", path.display(), i + 1))?))
        .collect()
}

pub const TRACE_HEADER: &str = "t,cpu_pct,cpu_temp_c,memory_mb,download_mbps,upload_mbps,transmitted_mb";

pub fn trace_csv(trace: &RuntimeTrace) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for (i, r) in trace.rows.iter().enumerate() {
        let _ = write!(out, "{}", i as f64 * trace.sampling_period);
        for v in r.iter().take(RUNTIME_CHANNELS) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// `factor,mean_f1,sd_f1,method`, one row per method and factor.
pub fn metrics_csv(reports: &[CvReport]) -> String {
    let mut out = String::from("factor,mean_f1,sd_f1,method\n");
    for r in reports {
        for (j, f) in r.factors.iter().enumerate() {
            let _ = writeln!(out, "Y{},{},{},{}", j + 1, opt(f.mean), opt(f.sd), r.method);
        }
    }
    out
}

pub fn cyber_metrics_csv(report: &CyberReport) -> String {
    let mut out = String::from("factor,mean_f1,sd_f1,method\n");
    for (c, f) in report.factors.iter().enumerate() {
        let _ = writeln!(out, "Y{},{},{},learned classifier vs rule", c + 6, opt(f.mean), opt(f.sd));
    }
    out
}

/// Published values with an explicit flag that synthetic data does not
/// reproduce them.
pub fn published_reference_csv() -> String {
    let mut out = String::from("factor,mean_f1,sd_f1,method,note\n");
    for (m, row) in PUBLISHED_DIAGNOSIS_F1 {
        for (j, (mean, sd)) in row.iter().enumerate() {
            let _ = writeln!(out, "Y{},{mean:.2},{sd:.2},{m},published; not reproducible on synthetic data", j + 1);
        }
    }
    for (m, row) in PUBLISHED_CYBER_F1 {
        for (j, (mean, sd)) in row.iter().enumerate() {
            let _ = writeln!(out, "Y{},{mean:.2},{sd:.2},{m},published; not reproducible on synthetic data", j + 6);
        }
    }
    out
}

/// Methods x factors table in `mean (sd)` cells, with published values
/// appended as annotated rows.
pub fn comparison_table(reports: &[CvReport], annotate: bool) -> String {
    let mut out = String::from("| Method | Y1 | Y2 | Y3 | Y4 | Y5 |\n|---|---|---|---|---|---|\n");
    for r in reports {
        let cells: Vec<String> = r.factors.iter().map(|f| f.cell()).collect();
        let _ = writeln!(out, "| {} | {} |", r.method, cells.join(" | "));
    }
    if annotate {
        for (m, row) in PUBLISHED_DIAGNOSIS_F1 {
            let cells: Vec<String> = row.iter().map(|(a, b)| format!("{a:.2} ({b:.2})")).collect();
            let _ = writeln!(out, "| {m} (published, not reproducible) | {} |", cells.join(" | "));
        }
    }
    out
}

/// Plot-ready curve: `time,p_t,p_s,t1,t2,t3` with the episode markers
/// repeated on every row (empty when undefined).
pub fn episode_csv(demo: &EpisodeDemo) -> String {
    let ep = demo.episode.as_ref();
    let t1 = opt(ep.map(|e| e.t1));
    let t2 = opt(ep.map(|e| e.t2));
    let t3 = opt(ep.and_then(|e| e.t3));
    let mut out = String::from("time,p_t,p_s,t1,t2,t3\n");
    for (t, p) in &demo.curve {
        let _ = writeln!(out, "{t:.6},{p:.6},{},{t1},{t2},{t3}", demo.p_s);
    }
    out
}

/// One row per task: status, placement and labels.
pub fn task_report_csv(tasks: &[ComputationTask]) -> String {
    let mut out = String::from("task_id,scenario_id,machine_id,node_id,status,hazard_flag,best_f1,labels\n");
    for t in tasks {
        let labels: String = t.label().present.iter().map(|&b| if b { '1' } else { '0' }).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{},{},{labels}",
            t.task_id,
            t.scenario_id,
            t.machine_id,
            t.node_id,
            t.status,
            t.hazard_flag,
            opt(t.performance.map(|p| p.best_f1()))
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub profile: String,
    pub config_sha256: String,
    pub version: String,
    pub task_log_sha256: Option<String>,
    /// Relative path -> sha256 of every artifact present at emission time.
    pub files: BTreeMap<String, String>,
}

/// Sorted relative paths of all files under `root`, skipping `exclude`.
pub fn list_files(root: &Path, exclude: &[&str]) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for e in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let p = e?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                out.push(p.strip_prefix(root)?.to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    if root.exists() {
        walk(root, root, &mut out)?;
    }
    out.retain(|p| !exclude.iter().any(|x| p == Path::new(x)));
    out.sort();
    Ok(out)
}

pub fn file_digests(root: &Path, exclude: &[&str]) -> Result<BTreeMap<String, String>> {
    list_files(root, exclude)?
        .into_iter()
        .map(|rel| {
            let bytes = fs::read(root.join(&rel))?;
            Ok((rel.to_string_lossy().replace('\\', "/"), sha256_hex(&bytes)))
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    if path.exists() && !path.is_dir() {
        bail!("{} exists and is not a directory", path.display());
    }
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
