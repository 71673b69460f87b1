//! File-backed experiment stages around `mii-resil-core`: every stage reads
//! its inputs from an output directory and writes its artifacts back there,
//! so the CLI subcommands can run one at a time or all in a row.

pub mod formats;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use mii_resil_core::experiment::{
    self, build_world, evaluate_diagnosers, run_episode_pair, select_scenarios, train_diagnosers, DataArtifacts, DemoKind, Diagnosers,
    EpisodeDemo, EvaluationReport, ExperimentConfig, ExperimentRun, Method, Profile, ScenarioPlan, World,
};
use mii_resil_core::nn::export_params;
use mii_resil_core::pipeline::{Deployment, PipelineConfig};

use formats::*;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Resolves the effective config: an explicit file, else the one saved in
/// the output directory, else the profile defaults; `seed` overrides all.
pub fn resolve_config(config: Option<&Path>, out: &Path, profile: Profile, seed: Option<u64>) -> Result<ExperimentConfig> {
    let saved = out.join(CONFIG_FILE);
    let mut cfg = match config {
        Some(p) => read_json(p)?,
        None if saved.exists() => read_json(&saved)?,
        None => ExperimentConfig::for_profile(profile, seed.unwrap_or(0)),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.diagnosis.seed = s;
    }
    cfg.output_dir = out.to_string_lossy().into_owned();
    cfg.validate()?;
    Ok(cfg)
}

/// Paths of every artifact inside one output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn require(&self, rel: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            anyhow::bail!("missing {}; run `{stage}` first", p.display());
        }
        Ok(p)
    }

    pub fn save_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        write_json(&self.path(CONFIG_FILE), cfg)
    }

    pub fn save_data(&self, cfg: &ExperimentConfig, data: &DataArtifacts) -> Result<()> {
        write_json(&self.path("data/bundle.json"), &DataBundle::from(data))?;
        let csv = corpus_csv(&data.base);
        write_text(&self.path("data/base_corpus.csv"), &csv)?;
        write_json(&self.path("data/base_corpus.manifest.json"), &corpus_manifest("base_corpus.csv", &data.base, cfg.seed, &csv))
    }

    pub fn load_data(&self) -> Result<DataArtifacts> {
        let b: DataBundle = read_json(&self.require("data/bundle.json", "gen-data")?)?;
        Ok(b.into())
    }

    pub fn save_deployment(&self, grid: &[PipelineConfig], dep: &Deployment) -> Result<()> {
        write_json(&self.path("pipelines/grid.json"), &grid)?;
        write_json(&self.path("pipelines/deployment.json"), dep)?;
        let (entries, params) = deployment_manifest(dep);
        write_json(&self.path("pipelines/manifest.json"), &entries)?;
        for (name, map) in params {
            write_json(&self.path(&format!("pipelines/{name}")), &map)?;
        }
        Ok(())
    }

    pub fn load_world(&self) -> Result<World> {
        let data = self.load_data()?;
        let grid = read_json(&self.require("pipelines/grid.json", "train-pipelines")?)?;
        let deployment = read_json(&self.require("pipelines/deployment.json", "train-pipelines")?)?;
        Ok(World { data, grid, deployment })
    }

    pub fn save_plans(&self, plans: &[ScenarioPlan]) -> Result<()> {
        write_json(&self.path("scenarios/plans.json"), &plans)
    }

    pub fn load_plans(&self) -> Result<Vec<ScenarioPlan>> {
        read_json(&self.require("scenarios/plans.json", "gen-scenarios")?)
    }

    pub fn save_run(&self, run: &ExperimentRun) -> Result<String> {
        write_json(&self.path("run/run.json"), &RunBundle::from(run))?;
        write_text(&self.path("run/events.jsonl"), &events_jsonl(&run.events)?)?;
        for t in &run.tasks {
            if let Some(tr) = &t.runtime {
                write_text(&self.path(&format!("run/traces/task_{}.csv", t.task_id)), &trace_csv(tr))?;
            }
        }
        let digest = task_log_digest(&run.tasks)?;
        write_text(&self.path("run/task_log.sha256"), &format!("{digest}\n"))?;
        Ok(digest)
    }

    pub fn load_run(&self) -> Result<ExperimentRun> {
        let b: RunBundle = read_json(&self.require("run/run.json", "run")?)?;
        Ok(b.into())
    }

    pub fn save_diagnosers(&self, cfg: &ExperimentConfig, d: &Diagnosers) -> Result<()> {
        write_json(&self.path("diagnoser/diagnosers.json"), d)?;
        write_json(&self.path("diagnoser/mmsla_params.json"), &export_params(&mut d.mmsla.model.clone(), "mmsla"))?;
        write_json(&self.path("diagnoser/cyber_params.json"), &export_params(&mut d.cyber.model.clone(), "cyber"))?;
        let manifest = DiagnoserManifest {
            latent_dim: mii_resil_core::diagnosis::LATENT_DIM,
            hidden_dim: mii_resil_core::diagnosis::HIDDEN_DIM,
            heads: d.mmsla.model.heads.len(),
            config: d.mmsla.config.clone(),
            seed: cfg.seed,
            final_loss: d.mmsla.loss_history.last().copied(),
            params: ["mmsla_params.json".into(), "cyber_params.json".into()],
        };
        write_json(&self.path("diagnoser/manifest.json"), &manifest)
    }

    pub fn load_diagnosers(&self) -> Result<Diagnosers> {
        read_json(&self.require("diagnoser/diagnosers.json", "train-diagnoser")?)
    }

    pub fn save_evaluation(&self, report: &EvaluationReport) -> Result<()> {
        write_json(&self.path("eval/report.json"), report)?;
        write_text(&self.path("eval/metrics.csv"), &metrics_csv(&report.methods))?;
        write_text(&self.path("eval/published_reference.csv"), &published_reference_csv())?;
        write_text(&self.path("eval/table.md"), &evaluation_text(report))?;
        if let Some(c) = &report.cyber {
            write_text(&self.path("eval/cyber_metrics.csv"), &cyber_metrics_csv(c))?;
        }
        Ok(())
    }

    pub fn save_episodes(&self, pairs: &[(EpisodeDemo, EpisodeDemo)]) -> Result<String> {
        let mut summary = String::new();
        for (m, c) in pairs {
            for d in [m, c] {
                let stem = format!("episodes/{}_{}", d.kind.name(), if d.mitigated { "mitigated" } else { "control" });
                write_json(&self.path(&format!("{stem}.json")), d)?;
                write_text(&self.path(&format!("{stem}.csv")), &episode_csv(d))?;
            }
            summary.push_str(&episode_text(m, c));
        }
        write_text(&self.path("episodes/summary.txt"), &summary)?;
        Ok(summary)
    }

    /// Task report plus a manifest of every artifact's digest. Byte-stable
    /// for unchanged artifacts.
    pub fn emit_report(&self, cfg: &ExperimentConfig) -> Result<RunManifest> {
        let run = self.path("run/run.json");
        let task_log_sha256 = if run.exists() {
            let run = self.load_run()?;
            write_text(&self.path("task_report.csv"), &task_report_csv(&run.tasks))?;
            Some(task_log_digest(&run.tasks)?)
        } else {
            None
        };
        let config_sha256 = sha256_hex(&serde_json::to_vec(cfg)?);
        let manifest = RunManifest {
            seed: cfg.seed,
            profile: format!("{:?}", cfg.profile).to_lowercase(),
            config_sha256,
            version: env!("CARGO_PKG_VERSION").into(),
            task_log_sha256,
            files: file_digests(&self.root, &[MANIFEST_FILE])?,
        };
        write_json(&self.path(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoserManifest {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub config: mii_resil_core::diagnosis::DiagnosisConfig,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub params: [String; 2],
}

pub fn evaluation_text(r: &EvaluationReport) -> String {
    let mut out = format!("Diagnosis corpus: {} completed tasks\n\n", r.corpus_size);
    out.push_str("Hazard-present share per factor:");
    for (j, b) in r.class_balance.iter().enumerate() {
        let _ = write!(out, " Y{}={b:.3}", j + 1);
    }
    out.push_str("\n\nPer-factor macro-F1, mean (sd) over 5-fold CV:\n\n");
    out.push_str(&comparison_table(&r.methods, true));
    if let Some(c) = &r.cyber {
        let _ = write!(
            out,
            "\nCyber-physical failures: {} tasks ({} Y6, {} Y7)\n\n| Method | Y6 | Y7 |\n|---|---|---|\n| Learned classifier vs rule | {} | {} |\n",
            c.samples,
            c.counts[0],
            c.counts[1],
            c.factors[0].cell(),
            c.factors[1].cell()
        );
        for (m, row) in experiment::PUBLISHED_CYBER_F1 {
            let _ = writeln!(out, "| {m} (published, not reproducible) | {:.2} ({:.2}) | {:.2} ({:.2}) |", row[0].0, row[0].1, row[1].0, row[1].1);
        }
    }
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

pub fn episode_text(m: &EpisodeDemo, c: &EpisodeDemo) -> String {
    let mut out = format!("[{}] mitigated: {}\n", m.kind.name(), m.summary_line());
    for a in &m.actions {
        let _ = writeln!(out, "  action at t = {:.1}: {}", a.issued_at, a.describe());
    }
    if let Some(k) = m.recovery_tasks {
        let _ = writeln!(out, "  recovered within {k} task(s) of mitigation");
    }
    let _ = writeln!(out, "[{}] control:   {}", c.kind.name(), c.summary_line());
    if m.lost_tasks + c.lost_tasks > 0 {
        let _ = writeln!(out, "  lost tasks: {} mitigated, {} control", m.lost_tasks, c.lost_tasks);
    }
    out
}

/// Wall-clock time of every stage of [`run_all`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub stages: Vec<(String, f64)>,
}

impl StageTimes {
    fn record(&mut self, name: &str, since: Instant) -> Instant {
        self.stages.push((name.into(), since.elapsed().as_secs_f64()));
        Instant::now()
    }

    pub fn total(&self) -> Duration {
        Duration::from_secs_f64(self.stages.iter().map(|s| s.1).sum())
    }
}

pub struct Outcome {
    pub world: World,
    pub run: ExperimentRun,
    pub digest: String,
    pub evaluation: EvaluationReport,
    pub diagnosers: Diagnosers,
    pub episodes: Vec<(EpisodeDemo, EpisodeDemo)>,
    pub manifest: RunManifest,
    pub times: StageTimes,
}

pub const ALL_METHODS: [Method; 3] = [Method::Mmsla, Method::Msla, Method::SpectralBaseline];

pub fn run_episodes(cfg: &ExperimentConfig, world: &World, d: &Diagnosers) -> Result<Vec<(EpisodeDemo, EpisodeDemo)>> {
    DemoKind::ALL.iter().map(|&k| run_episode_pair(cfg, world, d, k).with_context(|| format!("{} episode", k.name()))).collect()
}

/// Every stage in order, writing all artifacts under `ws`.
pub fn run_all(cfg: &ExperimentConfig, ws: &Workspace, methods: &[Method]) -> Result<Outcome> {
    let mut times = StageTimes::default();
    let mut t = Instant::now();
    ensure_dir(&ws.root)?;
    ws.save_config(cfg)?;
    let world = build_world(cfg)?;
    ws.save_data(cfg, &world.data)?;
    ws.save_deployment(&world.grid, &world.deployment)?;
    t = times.record("data+pipelines", t);
    let plans = select_scenarios(cfg)?;
    ws.save_plans(&plans)?;
    let run = experiment::run_experiment(cfg, &world, &plans)?;
    let digest = ws.save_run(&run)?;
    t = times.record("run", t);
    let diagnosers = train_diagnosers(cfg, &run)?;
    ws.save_diagnosers(cfg, &diagnosers)?;
    t = times.record("train-diagnoser", t);
    let evaluation = evaluate_diagnosers(cfg, &run, methods)?;
    ws.save_evaluation(&evaluation)?;
    t = times.record("eval", t);
    let episodes = run_episodes(cfg, &world, &diagnosers)?;
    ws.save_episodes(&episodes)?;
    t = times.record("episodes", t);
    let manifest = ws.emit_report(cfg)?;
    times.record("report", t);
    Ok(Outcome { world, run, digest, evaluation, diagnosers, episodes, manifest, times })
}
