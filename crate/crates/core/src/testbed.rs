//! Discrete-event model of the fog/Cloud testbed: task assignment, execution
//! with node and channel failures, and runtime trace synthesis.

use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::domain::{ComputationTask, RuntimeTrace, TaskStatus, CLOUD_NODE, FOG_NODES, RUNTIME_CHANNELS};
use crate::error::{Error, Result};
use crate::math;
use crate::pipeline::{execute_pipelines, Deployment};
use crate::rng::{self, tag};

/// Baseline telemetry: means for CPU %, temperature, memory, download,
/// upload and data volume, with stationary fluctuation scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub cpu: f64,
    pub temperature: f64,
    pub memory: f64,
    pub download: f64,
    pub upload: f64,
    pub download_max: f64,
    pub upload_max: f64,
    pub sd: [f64; RUNTIME_CHANNELS],
}

impl NodeProfile {
    fn fog(k: u8) -> Self {
        let k = f64::from(k);
        Self {
            cpu: 38.0 + 2.0 * k,
            temperature: 48.0 + k,
            memory: 480.0 + 16.0 * k,
            download: 20.0,
            upload: 10.0,
            download_max: 100.0,
            upload_max: 50.0,
            sd: [4.0, 1.5, 16.0, 2.0, 1.0, 0.0],
        }
    }

    fn cloud() -> Self {
        Self {
            cpu: 22.0,
            temperature: 40.0,
            memory: 4096.0,
            download: 200.0,
            upload: 100.0,
            download_max: 1000.0,
            upload_max: 500.0,
            sd: [3.0, 1.0, 64.0, 20.0, 10.0, 0.0],
        }
    }

    /// Baseline channel means; the volume channel depends on the batch.
    pub fn means(&self, volume: f64) -> [f64; RUNTIME_CHANNELS] {
        [self.cpu, self.temperature, self.memory, self.download, self.upload, volume]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeNode {
    pub node_id: u8,
    pub healthy: bool,
    pub channel_healthy: bool,
    pub profile: NodeProfile,
    /// Sim-time at which the node stopped sending heartbeats.
    pub failed_at: Option<f64>,
}

impl ComputeNode {
    pub fn is_cloud(&self) -> bool {
        self.node_id == CLOUD_NODE
    }
}

/// Five fog nodes and the Cloud.
pub fn default_nodes() -> Vec<ComputeNode> {
    (1..=FOG_NODES)
        .map(|k| (k, NodeProfile::fog(k)))
        .chain(core::iter::once((CLOUD_NODE, NodeProfile::cloud())))
        .map(|(node_id, profile)| ComputeNode { node_id, healthy: true, channel_healthy: true, profile, failed_at: None })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mean_duration: f64,
    pub duration_sd: f64,
    pub sampling_period: f64,
    /// Timeout bound as a multiple of the mean duration.
    pub timeout_factor: f64,
    pub ar_coefficient: f64,
    /// Consecutive missed heartbeats before a node is declared down.
    pub heartbeat_misses: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { mean_duration: 360.0, duration_sd: 30.0, sampling_period: 10.0, timeout_factor: 3.0, ar_coefficient: 0.8, heartbeat_misses: 2 }
    }
}

impl SimConfig {
    pub fn timeout(&self) -> f64 {
        self.timeout_factor * self.mean_duration
    }
}

/// Uniform seeded choice over the given nodes.
pub fn assign_task(task_id: u64, nodes: &[ComputeNode], seed: u64) -> Result<u8> {
    if nodes.is_empty() {
        return Err(Error::NoHealthyCandidate);
    }
    let mut r = rng::rng_for(seed, &[tag::ASSIGN, task_id]);
    Ok(nodes[rng::below(&mut r, nodes.len())].node_id)
}

/// Hazard signatures a trace should carry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSignature {
    pub singular: bool,
    pub saturated: bool,
    /// Fraction of the duration after which the node died.
    pub lost_at: Option<f64>,
}

pub const SINGULAR_CPU_BOOST: f64 = 25.0;
pub const LOSS_TEMPERATURE_SPIKE: f64 = 15.0;

/// Telemetry rows every `sampling_period` over `duration`: baseline plus AR(1)
/// fluctuation, with the signature applied.
pub fn synthesize_runtime_trace(
    node: &ComputeNode,
    duration: f64,
    batch_mb: f64,
    signature: TraceSignature,
    cfg: &SimConfig,
    seed: u64,
) -> Result<RuntimeTrace> {
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("trace duration {duration}")));
    }
    let full = math::ceil(duration / cfg.sampling_period).max(1.0) as usize;
    let rows = match signature.lost_at {
        Some(f) => (math::ceil(f * duration / cfg.sampling_period) as usize).clamp(1, full),
        None => full,
    };
    let p = &node.profile;
    let volume = batch_mb * cfg.sampling_period / cfg.mean_duration;
    let means = p.means(volume);
    let mut sd = p.sd;
    sd[5] = 0.1 * volume;
    let phi = cfg.ar_coefficient;
    let innov = math::sqrt(1.0 - phi * phi);
    let mut r = rng::rng_from(seed);
    let mut state = [0.0; RUNTIME_CHANNELS];
    for (c, s) in state.iter_mut().enumerate() {
        *s = sd[c] * rng::normal(&mut r);
    }
    let mut out = Vec::with_capacity(rows);
    for t in 0..rows {
        let mut row = [0.0; RUNTIME_CHANNELS];
        for c in 0..RUNTIME_CHANNELS {
            row[c] = (means[c] + state[c]).max(0.0);
            state[c] = phi * state[c] + innov * sd[c] * rng::normal(&mut r);
        }
        if signature.singular {
            row[0] = (row[0] + SINGULAR_CPU_BOOST).min(100.0);
        }
        row[0] = row[0].min(100.0);
        if signature.saturated {
            row[3] = p.download_max * (0.9 + 0.1 * rng::uniform(&mut r));
            row[4] = p.upload_max * (0.9 + 0.1 * rng::uniform(&mut r));
        }
        if signature.lost_at.is_some() && t + 3 >= rows {
            row[1] += LOSS_TEMPERATURE_SPIKE;
        }
        out.push(row);
    }
    Ok(RuntimeTrace { rows: out, sampling_period: cfg.sampling_period })
}

/// Runs `task` on `node` starting at `start`: a disabled node loses the task
/// part-way, a disrupted channel times it out, otherwise the deployed
/// pipelines produce the performance vector.
pub fn simulate_execution(
    task: &mut ComputationTask,
    node: &ComputeNode,
    deployment: &Deployment,
    start: f64,
    cfg: &SimConfig,
    seed: u64,
) -> Result<()> {
    let mut r = rng::rng_for(seed, &[tag::EXEC, task.task_id]);
    let nominal = (cfg.mean_duration + cfg.duration_sd * rng::normal(&mut r)).max(cfg.sampling_period);
    let lost_fraction = 0.3 + 0.6 * rng::uniform(&mut r);
    let trace_seed = rng::derive(seed, &[tag::TRACE, task.task_id]);
    let batch_mb = task.batch.as_ref().map_or(0.0, |b| b.size_mb());
    let singular = task.directives.singular_pipelines > 0;
    let duration = if singular { 2.0 * nominal } else { nominal };
    task.node_id = node.node_id;
    task.start_time = start;
    task.performance = None;
    task.precision_flags.clear();
    let lost = !node.is_cloud() && task.directives.disabled_nodes.contains(&node.node_id);
    let cut = !node.is_cloud() && task.directives.disrupted_channels.contains(&node.node_id);
    if lost {
        let sig = TraceSignature { singular, saturated: false, lost_at: Some(lost_fraction) };
        task.runtime = Some(synthesize_runtime_trace(node, duration, batch_mb, sig, cfg, trace_seed)?);
        task.status = TaskStatus::NodeLost;
        task.end_time = start + lost_fraction * duration;
    } else if cut {
        let sig = TraceSignature { singular, saturated: true, lost_at: None };
        task.runtime = Some(synthesize_runtime_trace(node, cfg.timeout(), batch_mb, sig, cfg, trace_seed)?);
        task.status = TaskStatus::TimedOut;
        task.end_time = start + cfg.timeout();
    } else {
        let exec = execute_pipelines(task, deployment, nominal, seed)?;
        let sig = TraceSignature { singular, saturated: false, lost_at: None };
        task.runtime = Some(synthesize_runtime_trace(node, exec.compute_time, batch_mb, sig, cfg, trace_seed)?);
        task.performance = Some(exec.performance);
        task.status = TaskStatus::Completed;
        task.end_time = start + exec.compute_time;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Assigned,
    Started,
    Completed,
    TimedOut,
    NodeLost,
    NodeDown,
    ChannelDegraded,
    Diagnosis,
    Mitigation,
    Reassigned,
    Queued,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub task_id: u64,
    pub node_id: u8,
    pub scenario_id: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
struct Pending {
    time: f64,
    seq: u64,
    kind: EventKind,
    task: usize,
    node: u8,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Monotone event queue.
#[derive(Debug, Default)]
pub struct SimClock {
    pub now: f64,
    heap: BinaryHeap<Pending>,
    seq: u64,
}

impl SimClock {
    fn push(&mut self, time: f64, kind: EventKind, task: usize, node: u8) {
        self.seq += 1;
        self.heap.push(Pending { time: time.max(self.now), seq: self.seq, kind, task, node });
    }

    fn pop(&mut self) -> Option<Pending> {
        let p = self.heap.pop()?;
        self.now = p.time;
        Some(p)
    }
}

/// Simulates one scenario's tasks as an isolated world: all tasks arrive at
/// time 0, are assigned uniformly over all nodes and run FIFO per node.
pub fn run_scenario(
    tasks: &mut [ComputationTask],
    nodes: &[ComputeNode],
    deployment: &Deployment,
    cfg: &SimConfig,
    seed: u64,
) -> Result<Vec<Event>> {
    let mut clock = SimClock::default();
    let mut queues: BTreeMap<u8, VecDeque<usize>> = nodes.iter().map(|n| (n.node_id, VecDeque::new())).collect();
    let mut busy: BTreeMap<u8, bool> = nodes.iter().map(|n| (n.node_id, false)).collect();
    let mut log = Vec::new();
    let scenario_id = tasks.first().map_or(0, |t| t.scenario_id);
    for i in 0..tasks.len() {
        let node = assign_task(tasks[i].task_id, nodes, seed)?;
        clock.push(0.0, EventKind::Assigned, i, node);
    }
    while let Some(ev) = clock.pop() {
        let record = |kind, t: &ComputationTask| Event { time: ev.time, kind, task_id: t.task_id, node_id: ev.node, scenario_id, detail: None };
        match ev.kind {
            EventKind::Assigned => {
                tasks[ev.task].node_id = ev.node;
                log.push(record(EventKind::Assigned, &tasks[ev.task]));
                queues.get_mut(&ev.node).unwrap().push_back(ev.task);
                if !busy[&ev.node] {
                    clock.push(ev.time, EventKind::Started, usize::MAX, ev.node);
                }
            }
            EventKind::Started => {
                let Some(i) = queues.get_mut(&ev.node).unwrap().pop_front() else { continue };
                if busy[&ev.node] {
                    queues.get_mut(&ev.node).unwrap().push_front(i);
                    continue;
                }
                busy.insert(ev.node, true);
                let node = nodes.iter().find(|n| n.node_id == ev.node).unwrap();
                simulate_execution(&mut tasks[i], node, deployment, ev.time, cfg, seed)?;
                log.push(record(EventKind::Started, &tasks[i]));
                let done = match tasks[i].status {
                    TaskStatus::NodeLost => EventKind::NodeLost,
                    TaskStatus::TimedOut => EventKind::TimedOut,
                    _ => EventKind::Completed,
                };
                clock.push(tasks[i].end_time, done, i, ev.node);
            }
            EventKind::Completed | EventKind::TimedOut | EventKind::NodeLost => {
                log.push(record(ev.kind, &tasks[ev.task]));
                busy.insert(ev.node, false);
                if !queues[&ev.node].is_empty() {
                    clock.push(ev.time, EventKind::Started, usize::MAX, ev.node);
                }
            }
            _ => {}
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeHealth {
    pub node_id: u8,
    pub alive: bool,
    pub channel_ok: bool,
}

/// Health as seen by the orchestrator at `now`: a node is down once it has
/// missed `heartbeat_misses` consecutive heartbeats, and a channel is degraded
/// once a timeout on it has been observed.
pub fn node_health_report(nodes: &[ComputeNode], tasks: &[ComputationTask], now: f64, cfg: &SimConfig) -> Vec<NodeHealth> {
    nodes
        .iter()
        .map(|n| {
            let detect = f64::from(cfg.heartbeat_misses) * cfg.sampling_period;
            let alive = !matches!(n.failed_at, Some(t) if now >= t + detect);
            let timed_out = tasks.iter().any(|t| t.node_id == n.node_id && t.status == TaskStatus::TimedOut && t.end_time <= now);
            NodeHealth { node_id: n.node_id, alive, channel_ok: n.channel_healthy && !timed_out }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_topology() {
        let nodes = default_nodes();
        assert_eq!(nodes.len(), 6);
        assert!(nodes[5].is_cloud());
        assert!(nodes[5].profile.download_max > nodes[0].profile.download_max);
    }

    #[test]
    fn assignment_is_uniform() {
        let nodes = default_nodes();
        let mut counts = [0usize; 6];
        for id in 0..6000 {
            counts[usize::from(assign_task(id, &nodes, 42).unwrap()) - 1] += 1;
        }
        assert!(counts.iter().all(|&c| (880..=1120).contains(&c)), "{counts:?}");
    }

    #[test]
    fn single_node_always_chosen() {
        let nodes = default_nodes()[..1].to_vec();
        assert!((0..50).all(|id| assign_task(id, &nodes, 1).unwrap() == 1));
    }

    #[test]
    fn row_count_follows_duration() {
        let node = &default_nodes()[0];
        let cfg = SimConfig::default();
        let tr = synthesize_runtime_trace(node, 360.0, 1.6, TraceSignature::default(), &cfg, 3).unwrap();
        assert_eq!(tr.len(), 36);
        tr.validate().unwrap();
        assert!(synthesize_runtime_trace(node, 0.0, 1.6, TraceSignature::default(), &cfg, 3).is_err());
    }

    #[test]
    fn saturation_signature() {
        let node = &default_nodes()[2];
        let cfg = SimConfig::default();
        for seed in 0..100 {
            let sig = TraceSignature { saturated: true, ..Default::default() };
            let tr = synthesize_runtime_trace(node, 360.0, 1.6, sig, &cfg, seed).unwrap();
            assert!(tr.channel(3).iter().all(|&v| v >= 0.9 * node.profile.download_max));
            assert!(tr.channel(4).iter().all(|&v| v >= 0.9 * node.profile.upload_max));
        }
    }

    #[test]
    fn healthy_traces_center_on_baseline() {
        let node = &default_nodes()[0];
        let cfg = SimConfig::default();
        let mut sums = [0.0; RUNTIME_CHANNELS];
        let n = 1000;
        for seed in 0..n {
            let tr = synthesize_runtime_trace(node, 360.0, 1.6, TraceSignature::default(), &cfg, seed).unwrap();
            for c in 0..RUNTIME_CHANNELS {
                sums[c] += math::mean(&tr.channel(c)) / n as f64;
            }
        }
        let volume = 1.6 * cfg.sampling_period / cfg.mean_duration;
        let means = node.profile.means(volume);
        let mut sd = node.profile.sd;
        sd[5] = 0.1 * volume;
        // a 36-row trace mean of an AR(1) with phi = 0.8 has variance at most
        // sd^2 (1 + phi) / ((1 - phi) 36); averaging over n traces divides by n
        let band = |s: f64| 3.0 * s * math::sqrt(1.8 / 0.2 / 36.0 / n as f64);
        for c in 0..RUNTIME_CHANNELS {
            assert!((sums[c] - means[c]).abs() <= band(sd[c]) + 1e-12, "channel {c}: {} vs {}", sums[c], means[c]);
        }
    }

    #[test]
    fn heartbeat_rule() {
        let mut nodes = default_nodes();
        let cfg = SimConfig::default();
        nodes[1].failed_at = Some(100.0);
        let at = |t| node_health_report(&nodes, &[], t, &cfg)[1].alive;
        assert!(at(110.0));
        assert!(at(119.9));
        assert!(!at(120.0));
        assert!(node_health_report(&nodes, &[], 500.0, &cfg)[0].alive);
    }
}
