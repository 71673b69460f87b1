//! End-to-end orchestration: the factorial scenario roster, the simulated
//! run that produces the diagnosis corpus, diagnoser evaluation and the
//! scripted hazard/mitigation episodes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datagen::{
    derive_ground_truth_models, generate_base_dataset_with, generate_machine_batch, GeneratorParams, MachineSource,
    BASE_CORPUS_SIZE, DEFAULT_SERIES_LEN,
};
use crate::diagnosis::{
    cross_validate_baseline, cross_validate_mmsla, cyber_features, fold_assignment, rule_verdict, train_mmsla, true_verdict,
    verdict_f1, CvReport, CyberClassifier, CyberVerdict, DiagnosisConfig, DiagnosisSample, FactorScore, HeadMode,
    TrainedDiagnoser, DIAGNOSED_FACTORS,
};
use crate::domain::{ComputationTask, Factor, HazardScenario, Layer, MTSSample, Quality, TaskStatus, FACTORS, MACHINES};
use crate::error::{Error, Result};
use crate::hazard::{apply_scenario_to_task, CLASS_RATIOS};
use crate::mitigation::{mitigate_data_hazard, mitigate_pipeline_hazard, reassign_task, MitigationAction, MitigationKind, MitigationState};
use crate::pipeline::{build_config_grid, rank_and_deploy, train_pipeline_with, Deployment, GridSpec, PipelineConfig, PipelineTraining, TrainedPipeline};
use crate::resilience::{build_curve, compute_metrics, compute_metrics_censored, detect_episodes, ResilienceEpisode};
use crate::rng::{self, tag};
use crate::testbed::{default_nodes, node_health_report, run_scenario, simulate_execution, ComputeNode, Event, EventKind, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Full,
}

/// Scripted single-node episode settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub tasks: usize,
    /// Index of the first hazard task.
    pub onset: usize,
    /// Sim-seconds from task completion to diagnosis completion.
    pub diagnosis_latency: f64,
    pub machine: u8,
    pub node: u8,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { tasks: 10, onset: 3, diagnosis_latency: 30.0, machine: 1, node: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub profile: Profile,
    pub tasks_per_scenario: usize,
    pub max_hazard_tasks: usize,
    pub grid: GridSpec,
    pub generator: GeneratorParams,
    /// Perturbation scale of the machine ground-truth models.
    pub sigma_gt: f64,
    pub base_corpus: usize,
    pub series_len: usize,
    pub corpus_per_machine: usize,
    pub batch_size: usize,
    /// Scenarios kept per (Y4, Y5) level cell; `None` keeps the full factorial.
    pub scenarios_per_cell: Option<usize>,
    pub p_s: f64,
    pub delta_t: f64,
    pub sim: SimConfig,
    pub pipeline_training: PipelineTraining,
    pub diagnosis: DiagnosisConfig,
    pub episode: EpisodeConfig,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::full(0)
    }
}

impl ExperimentConfig {
    pub fn full(seed: u64) -> Self {
        Self {
            seed,
            profile: Profile::Full,
            tasks_per_scenario: 5,
            max_hazard_tasks: 2,
            grid: GridSpec::full(),
            generator: GeneratorParams::default(),
            sigma_gt: 0.2,
            base_corpus: BASE_CORPUS_SIZE,
            series_len: DEFAULT_SERIES_LEN,
            corpus_per_machine: 300,
            batch_size: 100,
            scenarios_per_cell: None,
            p_s: 0.75,
            delta_t: 400.0,
            sim: SimConfig::default(),
            pipeline_training: PipelineTraining::default(),
            diagnosis: DiagnosisConfig { seed, ..Default::default() },
            episode: EpisodeConfig::default(),
            output_dir: "out".into(),
        }
    }

    /// Reduced pipeline grid and a stratified scenario subsample.
    pub fn desk(seed: u64) -> Self {
        Self { profile: Profile::Desk, grid: GridSpec::desk(), scenarios_per_cell: Some(15), ..Self::full(seed) }
    }

    pub fn for_profile(profile: Profile, seed: u64) -> Self {
        match profile {
            Profile::Desk => Self::desk(seed),
            Profile::Full => Self::full(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.tasks_per_scenario == 0 || self.tasks_per_scenario < self.max_hazard_tasks || self.max_hazard_tasks == 0 {
            return bad(format!("tasks_per_scenario {} must be >= max_hazard_tasks {} >= 1", self.tasks_per_scenario, self.max_hazard_tasks));
        }
        if !(self.p_s > 0.0 && self.p_s < 1.0) {
            return bad(format!("P_S = {} must lie in (0, 1)", self.p_s));
        }
        if !(self.delta_t > 0.0) {
            return bad(format!("window {} must be positive", self.delta_t));
        }
        if self.batch_size < 10 || self.corpus_per_machine < 20 {
            return bad("batch_size >= 10 and corpus_per_machine >= 20 required".into());
        }
        if self.scenarios_per_cell == Some(0) {
            return bad("scenarios_per_cell must be positive".into());
        }
        let e = &self.episode;
        if e.onset == 0 || e.onset >= e.tasks || !(1..=MACHINES as u8).contains(&e.machine) || !(1..=5).contains(&e.node) {
            return bad("episode needs 0 < onset < tasks, a valid machine and a fog node".into());
        }
        self.diagnosis.validate()
    }
}

/// One factorial cell: the scenario, its seed and which of its tasks carry the hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPlan {
    pub scenario_id: u32,
    pub scenario: HazardScenario,
    pub hazard_tasks: Vec<usize>,
    pub seed: u64,
}

/// All 1,458 scenarios; each non-normal scenario flags a seeded count in
/// `1..=max_hazard_tasks` of its tasks.
pub fn generate_factorial(config: &ExperimentConfig) -> Result<Vec<ScenarioPlan>> {
    config.validate()?;
    Ok(HazardScenario::enumerate_all()
        .into_iter()
        .enumerate()
        .map(|(i, scenario)| {
            let seed = rng::derive(config.seed, &[tag::SCENARIO, i as u64]);
            let hazard_tasks = if scenario.is_normal() {
                Vec::new()
            } else {
                let mut r = rng::rng_for(seed, &[tag::SCENARIO]);
                let k = 1 + rng::below(&mut r, config.max_hazard_tasks);
                let mut picks = rng::choose_distinct(&mut r, config.tasks_per_scenario, k);
                picks.sort_unstable();
                picks
            };
            ScenarioPlan { scenario_id: i as u32, scenario, hazard_tasks, seed }
        })
        .collect())
}

/// Task `i` of a scenario processes a batch from machine `i mod 5 + 1`.
pub fn roster(plans: &[ScenarioPlan], tasks_per_scenario: usize) -> Vec<ComputationTask> {
    plans
        .iter()
        .flat_map(|p| {
            (0..tasks_per_scenario).map(move |i| {
                let id = u64::from(p.scenario_id) * tasks_per_scenario as u64 + i as u64;
                let mut t = ComputationTask::new(id, p.scenario_id, (i % MACHINES) as u8 + 1);
                t.hazard_flag = p.hazard_tasks.contains(&i);
                t
            })
        })
        .collect()
}

/// Keeps `per_cell` seeded scenarios from every (Y4, Y5) level cell, in
/// scenario order.
pub fn stratified_subsample(plans: &[ScenarioPlan], per_cell: usize, seed: u64) -> Vec<ScenarioPlan> {
    let mut cells: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for (i, p) in plans.iter().enumerate() {
        cells.entry((p.scenario.level(Factor::Y4), p.scenario.level(Factor::Y5))).or_default().push(i);
    }
    let mut keep = Vec::new();
    for ((y4, y5), mut idx) in cells {
        let mut r = rng::rng_for(seed, &[tag::SCENARIO, u64::MAX, u64::from(y4), u64::from(y5)]);
        rng::shuffle(&mut r, &mut idx);
        keep.extend(idx.into_iter().take(per_cell));
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| plans[i].clone()).collect()
}

/// The scenarios a config actually runs.
pub fn select_scenarios(config: &ExperimentConfig) -> Result<Vec<ScenarioPlan>> {
    let plans = generate_factorial(config)?;
    Ok(match config.scenarios_per_cell {
        Some(k) => stratified_subsample(&plans, k, config.seed),
        None => plans,
    })
}

/// Base corpus, the baseline pipeline and the five machine data sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataArtifacts {
    pub base: Vec<MTSSample>,
    pub baseline: TrainedPipeline,
    pub sources: Vec<MachineSource>,
}

impl DataArtifacts {
    pub fn source(&self, machine: u8) -> Result<&MachineSource> {
        self.sources
            .iter()
            .find(|s| s.machine_id == machine)
            .ok_or_else(|| Error::InvalidParameter(format!("no data source for machine {machine}")))
    }

    /// Final-layer parameters of every machine's ground-truth labeler, used
    /// to pick donor machines.
    pub fn similarity_vectors(&self) -> Vec<(u8, Vec<f64>)> {
        self.sources.iter().map(|s| (s.machine_id, s.ground_truth.final_layer_vector())).collect()
    }
}

/// Generates the base corpus, fits the baseline as the best grid config on it
/// and derives the per-machine ground truth.
pub fn generate_data(config: &ExperimentConfig) -> Result<DataArtifacts> {
    config.validate()?;
    let base_seed = rng::derive(config.seed, &[tag::BASE_DATA]);
    let base = generate_base_dataset_with(base_seed, config.base_corpus, config.series_len, &config.generator)?;
    let grid = build_config_grid(&GridSpec::desk(), GridSpec::desk().size())?;
    let mut baseline: Option<TrainedPipeline> = None;
    for c in &grid {
        let p = match train_pipeline_with(c, &base, 0, config.seed, &config.pipeline_training) {
            Ok(p) => p,
            Err(Error::Diverged(_)) => continue,
            Err(e) => return Err(e),
        };
        if baseline.as_ref().is_none_or(|b| p.validation_score > b.validation_score) {
            baseline = Some(p);
        }
    }
    let baseline = baseline.ok_or(Error::UntrainedBaseline)?;
    let gts = derive_ground_truth_models(&baseline, config.sigma_gt, config.seed)?;
    let sources = gts.into_iter().map(|gt| MachineSource { machine_id: gt.machine_id, base: base.clone(), ground_truth: gt }).collect();
    Ok(DataArtifacts { base, baseline, sources })
}

pub fn machine_corpora(config: &ExperimentConfig, data: &DataArtifacts) -> Result<Vec<(u8, Vec<MTSSample>)>> {
    data.sources.iter().map(|s| Ok((s.machine_id, s.corpus(config.corpus_per_machine, config.seed)?))).collect()
}

/// Trains the configured grid on every machine corpus and deploys the top three.
pub fn train_pipelines(config: &ExperimentConfig, data: &DataArtifacts) -> Result<(Vec<PipelineConfig>, Deployment)> {
    let grid = build_config_grid(&config.grid, config.grid.size())?;
    let corpora = machine_corpora(config, data)?;
    let deployment = rank_and_deploy(&corpora, &grid, config.seed, &config.pipeline_training)?;
    Ok((grid, deployment))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub data: DataArtifacts,
    pub grid: Vec<PipelineConfig>,
    pub deployment: Deployment,
}

pub fn build_world(config: &ExperimentConfig) -> Result<World> {
    let data = generate_data(config)?;
    let (grid, deployment) = train_pipelines(config, &data)?;
    Ok(World { data, grid, deployment })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub plans: Vec<ScenarioPlan>,
    pub tasks: Vec<ComputationTask>,
    pub events: Vec<Event>,
}

/// Builds one task's clean batch and applies its scenario.
fn prepare_task(task: &mut ComputationTask, plan: &ScenarioPlan, config: &ExperimentConfig, data: &DataArtifacts) -> Result<()> {
    let src = data.source(task.machine_id)?;
    let seed = rng::derive(config.seed, &[tag::BATCH, task.task_id]);
    task.batch = Some(generate_machine_batch(src, config.batch_size, CLASS_RATIOS[0], seed)?);
    let flag = task.hazard_flag;
    apply_scenario_to_task(task, &plan.scenario, flag, plan.seed)
}

/// Executes every planned scenario as an isolated world: injection, random
/// node assignment, simulation and pipeline execution. Batches are dropped
/// once a task has run.
pub fn run_experiment(config: &ExperimentConfig, world: &World, plans: &[ScenarioPlan]) -> Result<ExperimentRun> {
    config.validate()?;
    let nodes = default_nodes();
    let mut tasks = Vec::with_capacity(plans.len() * config.tasks_per_scenario);
    let mut events = Vec::new();
    for plan in plans {
        let mut batch = roster(core::slice::from_ref(plan), config.tasks_per_scenario);
        for t in &mut batch {
            prepare_task(t, plan, config, &world.data)?;
        }
        events.extend(run_scenario(&mut batch, &nodes, &world.deployment, &config.sim, plan.seed)?);
        for t in &mut batch {
            t.batch = None;
            t.check_invariants()?;
        }
        tasks.extend(batch);
    }
    Ok(ExperimentRun { plans: plans.to_vec(), tasks, events })
}

/// `(X^P, X^R, labels)` of every completed task.
pub fn diagnosis_corpus(tasks: &[ComputationTask]) -> Result<Vec<DiagnosisSample>> {
    tasks.iter().filter(|t| t.status == TaskStatus::Completed).map(DiagnosisSample::from_task).collect()
}

/// Failed tasks with their cyber-physical features, true cause and rule verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyberCorpus {
    pub task_ids: Vec<u64>,
    pub features: Vec<Vec<f64>>,
    pub truth: Vec<CyberVerdict>,
    pub rule: Vec<CyberVerdict>,
}

pub fn cyber_corpus(tasks: &[ComputationTask]) -> Result<CyberCorpus> {
    let mut c = CyberCorpus { task_ids: Vec::new(), features: Vec::new(), truth: Vec::new(), rule: Vec::new() };
    for t in tasks.iter().filter(|t| matches!(t.status, TaskStatus::NodeLost | TaskStatus::TimedOut)) {
        let truth = true_verdict(t).ok_or_else(|| Error::InvalidTask(format!("task {} failed without a directive", t.task_id)))?;
        c.task_ids.push(t.task_id);
        c.features.push(cyber_features(t)?);
        c.truth.push(truth);
        c.rule.push(rule_verdict(t)?);
    }
    Ok(c)
}

/// Hazard-present share of every factor over all tasks.
pub fn class_balance(tasks: &[ComputationTask]) -> [f64; FACTORS] {
    let n = tasks.len().max(1) as f64;
    core::array::from_fn(|j| tasks.iter().filter(|t| t.label().present[j]).count() as f64 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Mmsla,
    Msla,
    SpectralBaseline,
}

/// Published per-factor F1 (mean, sd) over 5-fold CV on real testbed
/// data. Shown for orientation only: synthetic data cannot reproduce them.
pub const PUBLISHED_DIAGNOSIS_F1: [(&str, [(f64, f64); DIAGNOSED_FACTORS]); 4] = [
    ("MMSLA", [(0.90, 0.01), (0.70, 0.02), (0.89, 0.01), (0.94, 0.01), (0.95, 0.01)]),
    ("MSLA", [(0.86, 0.02), (0.61, 0.01), (0.89, 0.01), (0.71, 0.01), (0.76, 0.02)]),
    ("XGBoost + SMOTE", [(0.79, 0.00), (0.68, 0.01), (0.78, 0.01), (0.94, 0.01), (0.89, 0.00)]),
    ("Random Forest + SMOTE", [(0.62, 0.01), (0.56, 0.01), (0.70, 0.01), (0.95, 0.02), (0.95, 0.01)]),
];

/// Published Y6/Y7 F1 (mean, sd), for orientation only.
pub const PUBLISHED_CYBER_F1: [(&str, [(f64, f64); 2]); 2] =
    [("XGBoost + SMOTE", [(0.90, 0.00), (0.89, 0.01)]), ("Random Forest + SMOTE", [(0.92, 0.01), (0.91, 0.01)])];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyberReport {
    pub samples: usize,
    /// Y6 and Y7 task counts.
    pub counts: [usize; 2],
    /// Out-of-fold predictions of the learned classifier scored against the rule.
    pub learned_vs_rule: [f64; 2],
    pub learned_vs_truth: [f64; 2],
    pub rule_vs_truth: [f64; 2],
    pub factors: [FactorScore; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub corpus_size: usize,
    pub class_balance: [f64; FACTORS],
    pub methods: Vec<CvReport>,
    pub cyber: Option<CyberReport>,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn method(&self, name: &str) -> Option<&CvReport> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// K-fold evaluation of the learned cyber-physical classifier.
pub fn evaluate_cyber(corpus: &CyberCorpus, folds: usize, seed: u64) -> Result<CyberReport> {
    let n = corpus.truth.len();
    let counts = [
        corpus.truth.iter().filter(|&&v| v == CyberVerdict::NodeFailure).count(),
        corpus.truth.iter().filter(|&&v| v == CyberVerdict::ChannelDisruption).count(),
    ];
    if n < folds || counts.iter().any(|&c| c < 2) {
        return Err(Error::InvalidParameter(format!("{n} failed tasks ({} Y6, {} Y7) are too few to evaluate", counts[0], counts[1])));
    }
    let assign = fold_assignment(n, folds, rng::derive(seed, &[tag::FOLDS, 7]));
    let mut oof = vec![CyberVerdict::NodeFailure; n];
    let mut per_fold: Vec<[Option<f64>; 2]> = Vec::with_capacity(folds);
    for k in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assign[i] != k).collect();
        let val: Vec<usize> = (0..n).filter(|&i| assign[i] == k).collect();
        let f: Vec<Vec<f64>> = train.iter().map(|&i| corpus.features[i].clone()).collect();
        let y: Vec<CyberVerdict> = train.iter().map(|&i| corpus.truth[i]).collect();
        let model = CyberClassifier::fit(&f, &y, rng::derive(seed, &[k as u64]))?;
        let pred: Vec<CyberVerdict> = val.iter().map(|&i| model.classify_features(&corpus.features[i])).collect();
        for (&i, &p) in val.iter().zip(&pred) {
            oof[i] = p;
        }
        let rule: Vec<CyberVerdict> = val.iter().map(|&i| corpus.rule[i]).collect();
        let both = rule.contains(&CyberVerdict::NodeFailure) && rule.contains(&CyberVerdict::ChannelDisruption);
        let s = verdict_f1(&pred, &rule);
        per_fold.push(if both { [Some(s[0]), Some(s[1])] } else { [None, None] });
    }
    let factors = core::array::from_fn(|c| FactorScore::from_folds(&per_fold.iter().map(|r| r[c]).collect::<Vec<_>>()));
    Ok(CyberReport {
        samples: n,
        counts,
        learned_vs_rule: verdict_f1(&oof, &corpus.rule),
        learned_vs_truth: verdict_f1(&oof, &corpus.truth),
        rule_vs_truth: verdict_f1(&corpus.rule, &corpus.truth),
        factors,
    })
}

/// Cross-validates the requested methods on the run's completed tasks and
/// the learned Y6/Y7 classifier on its failed tasks.
pub fn evaluate_diagnosers(config: &ExperimentConfig, run: &ExperimentRun, methods: &[Method]) -> Result<EvaluationReport> {
    let corpus = diagnosis_corpus(&run.tasks)?;
    let mut reports = Vec::with_capacity(methods.len());
    let mut warnings = Vec::new();
    for m in methods {
        let rep = match m {
            Method::Mmsla => cross_validate_mmsla(&corpus, &DiagnosisConfig { heads: HeadMode::Multi, ..config.diagnosis.clone() })?,
            Method::Msla => cross_validate_mmsla(&corpus, &DiagnosisConfig { heads: HeadMode::Single, ..config.diagnosis.clone() })?,
            Method::SpectralBaseline => cross_validate_baseline(&corpus, config.diagnosis.folds, config.diagnosis.seed)?,
        };
        warnings.extend(rep.warnings.iter().cloned());
        reports.push(rep);
    }
    let cyber = match evaluate_cyber(&cyber_corpus(&run.tasks)?, config.diagnosis.folds, config.diagnosis.seed) {
        Ok(c) => Some(c),
        Err(Error::InvalidParameter(w)) => {
            warnings.push(w);
            None
        }
        Err(e) => return Err(e),
    };
    Ok(EvaluationReport { corpus_size: corpus.len(), class_balance: class_balance(&run.tasks), methods: reports, cyber, warnings })
}

/// Diagnosers trained on a whole run, as used by the episode demos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosers {
    pub mmsla: TrainedDiagnoser,
    pub cyber: CyberClassifier,
}

pub fn train_diagnosers(config: &ExperimentConfig, run: &ExperimentRun) -> Result<Diagnosers> {
    let corpus = diagnosis_corpus(&run.tasks)?;
    let refs: Vec<&DiagnosisSample> = corpus.iter().collect();
    let mmsla = train_mmsla(&refs, &config.diagnosis, u64::MAX)?;
    let cc = cyber_corpus(&run.tasks)?;
    let cyber = CyberClassifier::fit(&cc.features, &cc.truth, config.diagnosis.seed)?;
    Ok(Diagnosers { mmsla, cyber })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoKind {
    Data,
    Pipeline,
    Node,
}

impl DemoKind {
    pub const ALL: [DemoKind; 3] = [DemoKind::Data, DemoKind::Pipeline, DemoKind::Node];

    fn index(self) -> u64 {
        self as u64
    }

    pub fn name(self) -> &'static str {
        match self {
            DemoKind::Data => "data",
            DemoKind::Pipeline => "pipeline",
            DemoKind::Node => "node",
        }
    }
}

/// Data-layer levels (Y1, Y2, Y3, Y4) of the first hazard task and of every
/// later one: the contamination worsens once it has started.
pub const DATA_DEMO_LEVELS: [[u8; 4]; 2] = [[1, 2, 1, 1], [2, 2, 2, 2]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub time: f64,
    pub task_id: u64,
    pub performance: Option<f64>,
    /// `P(present)` for Y1..Y5 on completed tasks.
    pub probabilities: Option<[f64; DIAGNOSED_FACTORS]>,
    pub cyber: Option<CyberVerdict>,
    pub flagged: Vec<Factor>,
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDemo {
    pub kind: DemoKind,
    pub mitigated: bool,
    pub p_s: f64,
    pub delta_t: f64,
    pub tasks: Vec<ComputationTask>,
    pub events: Vec<Event>,
    pub diagnoses: Vec<DiagnosisRecord>,
    pub actions: Vec<MitigationAction>,
    pub curve: Vec<(f64, f64)>,
    pub episode: Option<ResilienceEpisode>,
    /// Completed tasks after mitigation up to and including the first point
    /// back at or above `P_S`.
    pub recovery_tasks: Option<usize>,
    pub lost_tasks: usize,
    pub horizon: f64,
}

impl EpisodeDemo {
    pub fn summary_line(&self) -> String {
        match &self.episode {
            Some(e) => e.summary_line(),
            None => String::from("no failure episode"),
        }
    }
}

/// Data and pipeline layers with at least one flagged factor, in that order.
fn flagged_layers(flagged: &[Factor]) -> Vec<Layer> {
    [Layer::Data, Layer::Pipeline].into_iter().filter(|&l| flagged.iter().any(|f| f.layer() == l)).collect()
}

fn event(time: f64, kind: EventKind, task: &ComputationTask, detail: Option<String>) -> Event {
    Event { time, kind, task_id: task.task_id, node_id: task.node_id, scenario_id: task.scenario_id, detail }
}

const EPISODE_TASK_BASE: u64 = 1 << 40;

/// Scripted single-machine task stream: clean tasks, hazard onset, per-task
/// diagnosis and (when `mitigate`) the layer-specific mitigation.
pub fn run_episode_demo(config: &ExperimentConfig, world: &World, diagnosers: &Diagnosers, kind: DemoKind, mitigate: bool) -> Result<EpisodeDemo> {
    config.validate()?;
    let ep = config.episode;
    let seed = rng::derive(config.seed, &[tag::EPISODE, kind.index()]);
    let mut nodes = default_nodes();
    let mut deployment = world.deployment.clone();
    let mut state = MitigationState::default();
    let similarity = world.data.similarity_vectors();
    let mut tasks: Vec<ComputationTask> = Vec::with_capacity(ep.tasks);
    let mut events = Vec::new();
    let mut diagnoses = Vec::new();
    let mut lost_tasks = 0;
    let mut clock = 0.0;
    let mut dead_node: Option<u8> = None;
    let mut onset_time = f64::INFINITY;

    for k in 0..ep.tasks {
        if k == ep.onset {
            onset_time = clock;
        }
        let task_id = EPISODE_TASK_BASE + kind.index() * 1000 + k as u64;
        let mut task = ComputationTask::new(task_id, u32::MAX, ep.machine);
        let source = state.substitute_for(ep.machine).unwrap_or(ep.machine);
        let batch_seed = rng::derive(seed, &[tag::BATCH, k as u64]);
        let batch = generate_machine_batch(world.data.source(source)?, config.batch_size, CLASS_RATIOS[0], batch_seed)?;
        task.batch = Some(batch);
        let active = k >= ep.onset;
        let mut scenario = HazardScenario::NORMAL;
        match kind {
            DemoKind::Data if active && state.substitute_for(ep.machine).is_none() => {
                let lv = DATA_DEMO_LEVELS[usize::from(k > ep.onset)];
                for (f, l) in [Factor::Y1, Factor::Y2, Factor::Y3, Factor::Y4].into_iter().zip(lv) {
                    scenario = scenario.with(f, l);
                }
            }
            DemoKind::Pipeline if active && !state.singularity_cleared(ep.machine) => scenario = scenario.with(Factor::Y5, 2),
            DemoKind::Node if active => scenario = scenario.with(Factor::Y6, 1),
            _ => {}
        }
        apply_scenario_to_task(&mut task, &scenario, !scenario.is_normal(), seed)?;
        if kind == DemoKind::Pipeline && task.directives.singular_pipelines > 0 {
            // every pipeline collapses: first onto the nonconforming class, then onto the conforming one
            task.directives.singular_pipelines = 3;
            task.directives.singular_class = Some(if k == ep.onset { Quality::Nonconforming } else { Quality::Conforming }.as_class() as u8);
        }

        // node choice: a fixed fog node, except in the node demo where the
        // orchestrator spreads work over the fog nodes it believes healthy
        let node_id = if kind == DemoKind::Node {
            let believed: Vec<ComputeNode> = nodes
                .iter()
                .filter(|n| !n.is_cloud() && (!mitigate || Some(n.node_id) != dead_node.filter(|_| n.failed_at.is_some())))
                .cloned()
                .collect();
            let chosen = crate::testbed::assign_task(task_id, &believed, seed)?;
            if k == ep.onset {
                dead_node = Some(chosen);
            }
            chosen
        } else {
            ep.node
        };
        if kind == DemoKind::Node {
            task.directives.disabled_nodes = dead_node.into_iter().collect();
        }
        let node = nodes.iter().find(|n| n.node_id == node_id).cloned().ok_or(Error::NoHealthyCandidate)?;
        simulate_execution(&mut task, &node, &deployment, clock, &config.sim, seed)?;
        events.push(event(task.start_time, EventKind::Started, &task, None));

        let mut diag_time = task.end_time + ep.diagnosis_latency;
        match task.status {
            TaskStatus::Completed => {
                events.push(event(task.end_time, EventKind::Completed, &task, None));
                let perf = task.performance.as_ref().map(|p| p.best_f1());
                let probs = diagnosers.mmsla.predict(&DiagnosisSample::from_task(&task)?)?;
                let p1: [f64; DIAGNOSED_FACTORS] = core::array::from_fn(|j| probs[j][1]);
                let flagged: Vec<Factor> = (0..DIAGNOSED_FACTORS).filter(|&j| p1[j] > 0.5).map(|j| Factor::ALL[j]).collect();
                let triggered = perf.is_some_and(|p| p < config.p_s) && !flagged.is_empty();
                let detail = format!("best_f1={:.3} flagged={:?}", perf.unwrap_or(f64::NAN), flagged);
                events.push(event(diag_time, EventKind::Diagnosis, &task, Some(detail)));
                if mitigate && triggered {
                    for layer in flagged_layers(&flagged) {
                        let action = match layer {
                            Layer::Data if state.substitute_for(ep.machine).is_none() => {
                                Some(mitigate_data_hazard(&mut state, ep.machine, &similarity, &flagged, diag_time, task_id)?)
                            }
                            Layer::Pipeline if !state.singularity_cleared(ep.machine) => Some(mitigate_pipeline_hazard(
                                &mut state,
                                &mut deployment,
                                ep.machine,
                                &similarity,
                                &flagged,
                                diag_time,
                                task_id,
                            )?),
                            _ => None,
                        };
                        if let Some(a) = action {
                            events.push(event(diag_time, EventKind::Mitigation, &task, Some(a.describe())));
                        }
                    }
                }
                diagnoses.push(DiagnosisRecord { time: diag_time, task_id, performance: perf, probabilities: Some(p1), cyber: None, flagged, triggered });
            }
            TaskStatus::NodeLost | TaskStatus::TimedOut => {
                lost_tasks += 1;
                let kind_ev = if task.status == TaskStatus::NodeLost { EventKind::NodeLost } else { EventKind::TimedOut };
                events.push(event(task.end_time, kind_ev, &task, None));
                if task.status == TaskStatus::NodeLost {
                    if let Some(n) = nodes.iter_mut().find(|n| n.node_id == node_id) {
                        n.healthy = false;
                        n.failed_at.get_or_insert(task.end_time);
                    }
                }
                // the orchestrator notices after the missed heartbeats
                let detect = task.end_time + f64::from(config.sim.heartbeat_misses) * config.sim.sampling_period;
                diag_time = detect.max(diag_time);
                let verdict = crate::diagnosis::classify_cyberphysical(&task, &diagnosers.cyber)?;
                let flagged = vec![verdict.factor()];
                events.push(event(diag_time, EventKind::Diagnosis, &task, Some(format!("{verdict:?}"))));
                diagnoses.push(DiagnosisRecord {
                    time: diag_time,
                    task_id,
                    performance: None,
                    probabilities: None,
                    cyber: Some(verdict),
                    flagged,
                    triggered: true,
                });
                tasks.push(task.clone());
                if mitigate {
                    let health = node_health_report(&nodes, &tasks, diag_time, &config.sim);
                    let fog: Vec<_> = health.into_iter().filter(|h| h.node_id != crate::domain::CLOUD_NODE).collect();
                    match reassign_task(task_id, 0, &fog, seed) {
                        Ok(target) => {
                            let action = MitigationAction {
                                kind: MitigationKind::ReassignTask,
                                source: node_id,
                                target,
                                issued_at: diag_time,
                                diagnosis_time: diag_time,
                                task_id,
                                diagnosis: vec![verdict.factor()],
                                similarity: None,
                            };
                            events.push(event(diag_time, EventKind::Mitigation, &task, Some(action.describe())));
                            state.actions.push(action);
                            let mut retry = task.clone();
                            retry.batch = Some(generate_machine_batch(world.data.source(source)?, config.batch_size, CLASS_RATIOS[0], batch_seed)?);
                            apply_scenario_to_task(&mut retry, &scenario, !scenario.is_normal(), seed)?;
                            retry.directives.disabled_nodes = dead_node.into_iter().collect();
                            let target_node = nodes.iter().find(|n| n.node_id == target).cloned().ok_or(Error::NoHealthyCandidate)?;
                            simulate_execution(&mut retry, &target_node, &deployment, diag_time, &config.sim, rng::derive(seed, &[1]))?;
                            events.push(event(retry.start_time, EventKind::Reassigned, &retry, None));
                            events.push(event(retry.end_time, EventKind::Completed, &retry, None));
                            diag_time = retry.end_time + ep.diagnosis_latency;
                            retry.batch = None;
                            tasks.pop();
                            tasks.push(retry);
                        }
                        Err(Error::NoHealthyCandidate) => {
                            events.push(event(diag_time, EventKind::Queued, &task, Some("no healthy node".into())));
                        }
                        Err(e) => return Err(e),
                    }
                }
                clock = diag_time;
                continue;
            }
            _ => {}
        }
        task.batch = None;
        tasks.push(task);
        clock = diag_time;
    }

    let horizon = clock;
    let curve = build_curve(&tasks)?;
    let mitigations: Vec<f64> = state.actions.iter().map(|a| a.issued_at).collect();
    // dips before the hazard starts are ordinary noise, not the demonstrated episode
    let bounds = detect_episodes(&curve, config.p_s, &mitigations).into_iter().find(|b| b.t1 >= onset_time);
    let episode = match bounds {
        Some(b) if b.t3.is_some() => Some(compute_metrics(&b, &curve, config.p_s, config.delta_t)?),
        Some(b) if horizon > b.t1 => Some(compute_metrics_censored(&b, &curve, config.p_s, config.delta_t, horizon)?),
        _ => None,
    };
    let recovery_tasks = match (&episode, bounds) {
        (Some(_), Some(b)) if b.mitigated && b.t3.is_some() => {
            let t3 = b.t3.unwrap_or(f64::INFINITY);
            Some(curve.points().iter().filter(|p| p.0 > b.t2 && p.0 <= t3).count())
        }
        _ => None,
    };
    Ok(EpisodeDemo {
        kind,
        mitigated: mitigate,
        p_s: config.p_s,
        delta_t: config.delta_t,
        tasks,
        events,
        diagnoses,
        actions: state.actions,
        curve: curve.points().to_vec(),
        episode,
        recovery_tasks,
        lost_tasks,
        horizon,
    })
}

/// Mitigated run and its unmitigated control on the same seed.
pub fn run_episode_pair(config: &ExperimentConfig, world: &World, diagnosers: &Diagnosers, kind: DemoKind) -> Result<(EpisodeDemo, EpisodeDemo)> {
    Ok((run_episode_demo(config, world, diagnosers, kind, true)?, run_episode_demo(config, world, diagnosers, kind, false)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorial_counts() {
        let cfg = ExperimentConfig::default();
        let plans = generate_factorial(&cfg).unwrap();
        assert_eq!(plans.len(), 1458);
        let tasks = roster(&plans, cfg.tasks_per_scenario);
        assert_eq!(tasks.len(), 7290);
        assert!(plans.iter().all(|p| p.hazard_tasks.len() <= 2));
        assert!(plans.iter().filter(|p| !p.scenario.is_normal()).all(|p| !p.hazard_tasks.is_empty()));
        assert!(plans.iter().filter(|p| p.scenario.is_normal()).all(|p| p.hazard_tasks.is_empty()));
        let ids: alloc::collections::BTreeSet<u64> = tasks.iter().map(|t| t.task_id).collect();
        assert_eq!(ids.len(), 7290);
    }

    #[test]
    fn hazard_count_is_roughly_uniform() {
        let plans = generate_factorial(&ExperimentConfig::default()).unwrap();
        let two = plans.iter().filter(|p| p.hazard_tasks.len() == 2).count() as f64;
        let share = two / 1457.0;
        assert!((share - 0.5).abs() < 0.05, "{share}");
    }

    #[test]
    fn task_i_runs_on_machine_i() {
        let plans = generate_factorial(&ExperimentConfig::default()).unwrap();
        let tasks = roster(&plans[..2], 5);
        let machines: Vec<u8> = tasks.iter().map(|t| t.machine_id).collect();
        assert_eq!(machines, vec![1, 2, 3, 4, 5, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn desk_subsample_is_stratified() {
        let cfg = ExperimentConfig::desk(3);
        let plans = select_scenarios(&cfg).unwrap();
        assert_eq!(plans.len(), 9 * 15);
        for y4 in 0..3u8 {
            for y5 in 0..3u8 {
                let c = plans.iter().filter(|p| p.scenario.level(Factor::Y4) == y4 && p.scenario.level(Factor::Y5) == y5).count();
                assert_eq!(c, 15);
            }
        }
        assert_eq!(plans, select_scenarios(&cfg).unwrap());
        assert!(plans.windows(2).all(|w| w[0].scenario_id < w[1].scenario_id));
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::desk(1);
        assert!(c.validate().is_ok());
        c.max_hazard_tasks = 6;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk(1);
        c.p_s = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn balance_counts_labels() {
        let mut a = ComputationTask::new(1, 0, 1);
        a.scenario = HazardScenario::NORMAL.with(Factor::Y4, 2);
        let b = ComputationTask::new(2, 0, 2);
        let bal = class_balance(&[a, b]);
        assert_eq!(bal[3], 0.5);
        assert_eq!(bal[0], 0.0);
    }

    #[test]
    fn every_flagged_layer_is_mitigated() {
        assert_eq!(flagged_layers(&[Factor::Y2, Factor::Y5]), vec![Layer::Data, Layer::Pipeline]);
        assert_eq!(flagged_layers(&[Factor::Y5]), vec![Layer::Pipeline]);
        assert!(flagged_layers(&[]).is_empty());
    }
}
