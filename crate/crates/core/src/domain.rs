//! Shared vocabulary: samples, batches, hazard scenarios, labels and tasks.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Input channels per sample: six process variables plus four uninformative ones.
pub const CHANNELS: usize = 10;
pub const INFORMATIVE_CHANNELS: usize = 6;
pub const MIN_SERIES_LEN: usize = 8;
pub const MACHINES: usize = 5;
pub const PIPELINES_PER_MACHINE: usize = 3;
/// accuracy, precision, F1 for each deployed pipeline.
pub const PERF_DIM: usize = 3 * PIPELINES_PER_MACHINE;
pub const RUNTIME_CHANNELS: usize = 6;
pub const FOG_NODES: u8 = 5;
pub const CLOUD_NODE: u8 = 6;
pub const FACTORS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Factor {
    Y1,
    Y2,
    Y3,
    Y4,
    Y5,
    Y6,
    Y7,
}

impl Factor {
    pub const ALL: [Factor; FACTORS] = [
        Factor::Y1,
        Factor::Y2,
        Factor::Y3,
        Factor::Y4,
        Factor::Y5,
        Factor::Y6,
        Factor::Y7,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["Y1", "Y2", "Y3", "Y4", "Y5", "Y6", "Y7"][self.index()]
    }

    pub fn from_name(s: &str) -> Option<Factor> {
        Factor::ALL.iter().copied().find(|f| f.name() == s)
    }

    /// Levels admitted by the factor design.
    pub fn domain(self) -> &'static [u8] {
        match self {
            Factor::Y2 => &[0, 2],
            _ => &[0, 1, 2],
        }
    }

    pub fn layer(self) -> Layer {
        match self {
            Factor::Y1 | Factor::Y2 | Factor::Y3 | Factor::Y4 => Layer::Data,
            Factor::Y5 => Layer::Pipeline,
            Factor::Y6 | Factor::Y7 => Layer::CyberPhysical,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Data,
    Pipeline,
    CyberPhysical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Conforming,
    Nonconforming,
}

impl Quality {
    /// Nonconforming is the positive class everywhere.
    pub fn as_class(self) -> usize {
        match self {
            Quality::Conforming => 0,
            Quality::Nonconforming => 1,
        }
    }

    pub fn from_class(c: usize) -> Quality {
        if c == 1 {
            Quality::Nonconforming
        } else {
            Quality::Conforming
        }
    }
}

/// One multichannel time series, stored channel-major: `values[c * len + t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MTSSample {
    pub id: u64,
    pub len: usize,
    pub values: Vec<f64>,
    pub label: Quality,
}

impl MTSSample {
    pub fn new(id: u64, len: usize, values: Vec<f64>, label: Quality) -> Result<Self> {
        if len < MIN_SERIES_LEN {
            return Err(Error::InvalidParameter(alloc::format!(
                "series length {len} below minimum {MIN_SERIES_LEN}"
            )));
        }
        if values.len() != CHANNELS * len {
            return Err(Error::ShapeMismatch {
                expected: alloc::vec![CHANNELS, len],
                got: alloc::vec![values.len()],
            });
        }
        crate::error::ensure_finite(&values, "sample values")?;
        Ok(Self { id, len, values, label })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.len;
        &mut self.values[c * len..(c + 1) * len]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MTSBatch {
    pub samples: Vec<MTSSample>,
    pub machine_id: u8,
    pub nonconforming_ratio: f64,
}

impl MTSBatch {
    /// Builds a batch whose ratio is the empirical nonconforming share.
    pub fn from_samples(samples: Vec<MTSSample>, machine_id: u8) -> Self {
        let ratio = nonconforming_share(&samples);
        Self { samples, machine_id, nonconforming_ratio: ratio }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn nonconforming_count(&self) -> usize {
        self.samples.iter().filter(|s| s.label == Quality::Nonconforming).count()
    }

    pub fn refresh_ratio(&mut self) {
        self.nonconforming_ratio = nonconforming_share(&self.samples);
    }

    /// Approximate payload size in megabytes (8 bytes per value).
    pub fn size_mb(&self) -> f64 {
        let values: usize = self.samples.iter().map(|s| s.values.len()).sum();
        values as f64 * 8.0 / 1.0e6
    }

    /// Indices of samples ordered by id; batch-level statistics are accumulated in
    /// this order so results do not depend on sample order.
    pub fn id_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.sort_by_key(|&i| self.samples[i].id);
        idx
    }
}

fn nonconforming_share(samples: &[MTSSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| s.label == Quality::Nonconforming).count() as f64 / samples.len() as f64
}

fn serialize_factor_map<S: Serializer>(levels: &[u8; FACTORS], s: S) -> core::result::Result<S::Ok, S::Error> {
    let mut map = s.serialize_map(Some(FACTORS))?;
    for f in Factor::ALL {
        map.serialize_entry(f.name(), &levels[f.index()])?;
    }
    map.end()
}

fn deserialize_factor_map<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<[u8; FACTORS], D::Error> {
    struct FactorMap;
    impl<'de> Visitor<'de> for FactorMap {
        type Value = [u8; FACTORS];
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("an object with keys Y1..Y7")
        }
        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> core::result::Result<Self::Value, A::Error> {
            let mut out = [0u8; FACTORS];
            let mut seen = [false; FACTORS];
            while let Some(key) = map.next_key::<String>()? {
                let f = Factor::from_name(&key).ok_or_else(|| de::Error::unknown_field(&key, &["Y1", "Y7"]))?;
                out[f.index()] = map.next_value()?;
                seen[f.index()] = true;
            }
            if let Some(i) = seen.iter().position(|s| !s) {
                return Err(de::Error::missing_field(Factor::ALL[i].name()));
            }
            Ok(out)
        }
    }
    d.deserialize_map(FactorMap)
}

/// One level assignment for factors Y1..Y7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct HazardScenario {
    pub levels: [u8; FACTORS],
}

impl Serialize for HazardScenario {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        serialize_factor_map(&self.levels, s)
    }
}

impl<'de> Deserialize<'de> for HazardScenario {
    fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        deserialize_factor_map(d).map(|levels| HazardScenario { levels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioVerdict {
    Valid,
    Invalid { factor: Factor, level: u8 },
}

impl HazardScenario {
    pub const NORMAL: HazardScenario = HazardScenario { levels: [0; FACTORS] };

    pub fn new(levels: [u8; FACTORS]) -> Self {
        Self { levels }
    }

    pub fn level(&self, f: Factor) -> u8 {
        self.levels[f.index()]
    }

    pub fn with(mut self, f: Factor, level: u8) -> Self {
        self.levels[f.index()] = level;
        self
    }

    pub fn is_normal(&self) -> bool {
        self.levels.iter().all(|&l| l == 0)
    }

    pub fn validate(&self) -> ScenarioVerdict {
        validate_scenario(self)
    }

    /// Every valid scenario, in lexicographic level order (Y1 slowest).
    pub fn enumerate_all() -> Vec<HazardScenario> {
        let mut out = Vec::with_capacity(1458);
        let mut levels = [0u8; FACTORS];
        fn rec(k: usize, levels: &mut [u8; FACTORS], out: &mut Vec<HazardScenario>) {
            if k == FACTORS {
                out.push(HazardScenario { levels: *levels });
                return;
            }
            for &l in Factor::ALL[k].domain() {
                levels[k] = l;
                rec(k + 1, levels, out);
            }
        }
        rec(0, &mut levels, &mut out);
        out
    }
}

pub fn validate_scenario(s: &HazardScenario) -> ScenarioVerdict {
    for f in Factor::ALL {
        let l = s.level(f);
        if !f.domain().contains(&l) {
            return ScenarioVerdict::Invalid { factor: f, level: l };
        }
    }
    ScenarioVerdict::Valid
}

/// Presence flag per factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DiagnosisLabel {
    pub present: [bool; FACTORS],
}

impl DiagnosisLabel {
    pub fn is_present(&self, f: Factor) -> bool {
        self.present[f.index()]
    }

    pub fn any(&self) -> bool {
        self.present.iter().any(|&p| p)
    }
}

impl Serialize for DiagnosisLabel {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        let mut levels = [0u8; FACTORS];
        for (l, &p) in levels.iter_mut().zip(&self.present) {
            *l = p as u8;
        }
        serialize_factor_map(&levels, s)
    }
}

impl<'de> Deserialize<'de> for DiagnosisLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let levels = deserialize_factor_map(d)?;
        let mut present = [false; FACTORS];
        for (p, &l) in present.iter_mut().zip(&levels) {
            if l > 1 {
                return Err(de::Error::custom("label flags must be 0 or 1"));
            }
            *p = l == 1;
        }
        Ok(DiagnosisLabel { present })
    }
}

pub fn label_from_scenario(s: &HazardScenario) -> Result<DiagnosisLabel> {
    if let ScenarioVerdict::Invalid { factor, level } = validate_scenario(s) {
        return Err(Error::InvalidScenario { factor, level });
    }
    let mut present = [false; FACTORS];
    for (p, &l) in present.iter_mut().zip(&s.levels) {
        *p = l > 0;
    }
    Ok(DiagnosisLabel { present })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    Completed,
    TimedOut,
    NodeLost,
}

/// accuracy, precision, F1 for each of the three deployed pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceVector {
    pub metrics: [f64; PERF_DIM],
}

impl PerformanceVector {
    pub fn accuracy(&self, pipeline: usize) -> f64 {
        self.metrics[3 * pipeline]
    }

    pub fn precision(&self, pipeline: usize) -> f64 {
        self.metrics[3 * pipeline + 1]
    }

    pub fn f1(&self, pipeline: usize) -> f64 {
        self.metrics[3 * pipeline + 2]
    }

    /// Best F1 across the deployed pipelines; the system-level performance P_t.
    pub fn best_f1(&self) -> f64 {
        (0..PIPELINES_PER_MACHINE).map(|p| self.f1(p)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runtime telemetry rows: CPU %, CPU temperature (C), memory (MB),
/// download Mb/s, upload Mb/s, transmitted volume (MB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeTrace {
    pub rows: Vec<[f64; RUNTIME_CHANNELS]>,
    pub sampling_period: f64,
}

impl RuntimeTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[c]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Empty("runtime trace"));
        }
        for r in &self.rows {
            if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NonFinite("runtime trace (finite, nonnegative)".into()));
            }
        }
        Ok(())
    }
}

/// Pipeline and cyber-physical hazards a task carries for the layers below to enact.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HazardDirectives {
    pub singular_pipelines: u8,
    pub disabled_nodes: Vec<u8>,
    pub disrupted_channels: Vec<u8>,
    /// Scripted constant class for singular pipelines; drawn at random when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singular_class: Option<u8>,
}

impl HazardDirectives {
    pub fn is_clear(&self) -> bool {
        self.singular_pipelines == 0 && self.disabled_nodes.is_empty() && self.disrupted_channels.is_empty()
    }
}

/// A batch-prediction job for one machine's data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputationTask {
    pub task_id: u64,
    pub scenario_id: u32,
    /// Levels this task actually experiences (all zero for clean tasks).
    pub scenario: HazardScenario,
    pub hazard_flag: bool,
    pub machine_id: u8,
    #[serde(skip)]
    pub batch: Option<MTSBatch>,
    pub node_id: u8,
    pub status: TaskStatus,
    pub start_time: f64,
    pub end_time: f64,
    pub performance: Option<PerformanceVector>,
    #[serde(skip)]
    pub runtime: Option<RuntimeTrace>,
    pub directives: HazardDirectives,
    pub injection: Vec<crate::hazard::InjectionReport>,
    /// Pipelines whose precision had no positive predictions (defined as 0).
    pub precision_flags: Vec<u8>,
}

impl ComputationTask {
    pub fn new(task_id: u64, scenario_id: u32, machine_id: u8) -> Self {
        Self {
            task_id,
            scenario_id,
            scenario: HazardScenario::NORMAL,
            hazard_flag: false,
            machine_id,
            batch: None,
            node_id: 0,
            status: TaskStatus::Pending,
            start_time: 0.0,
            end_time: 0.0,
            performance: None,
            runtime: None,
            directives: HazardDirectives::default(),
            injection: Vec::new(),
            precision_flags: Vec::new(),
        }
    }

    pub fn label(&self) -> DiagnosisLabel {
        let mut present = [false; FACTORS];
        for (p, &l) in present.iter_mut().zip(&self.scenario.levels) {
            *p = l > 0;
        }
        DiagnosisLabel { present }
    }

    pub fn check_invariants(&self) -> Result<()> {
        match self.status {
            TaskStatus::Completed if self.performance.is_none() => {
                return Err(Error::InvalidTask(alloc::format!("task {} completed without performance", self.task_id)))
            }
            TaskStatus::TimedOut | TaskStatus::NodeLost if self.performance.is_some() => {
                return Err(Error::InvalidTask(alloc::format!("task {} failed but has performance", self.task_id)))
            }
            _ => {}
        }
        if self.status != TaskStatus::Pending && self.end_time <= self.start_time {
            return Err(Error::InvalidTask(alloc::format!("task {} ends before it starts", self.task_id)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_scenario_is_valid() {
        assert_eq!(HazardScenario::NORMAL.validate(), ScenarioVerdict::Valid);
    }

    #[test]
    fn y2_level_one_is_rejected() {
        let s = HazardScenario::NORMAL.with(Factor::Y2, 1);
        assert_eq!(s.validate(), ScenarioVerdict::Invalid { factor: Factor::Y2, level: 1 });
    }

    #[test]
    fn y6_out_of_domain() {
        let s = HazardScenario::NORMAL.with(Factor::Y6, 3);
        assert_eq!(s.validate(), ScenarioVerdict::Invalid { factor: Factor::Y6, level: 3 });
        assert!(label_from_scenario(&s).is_err());
    }

    #[test]
    fn labels_follow_levels() {
        assert!(!label_from_scenario(&HazardScenario::NORMAL).unwrap().any());
        let l = label_from_scenario(&HazardScenario::new([0, 2, 0, 0, 0, 0, 0])).unwrap();
        assert_eq!(l.present, [false, true, false, false, false, false, false]);
        let l = label_from_scenario(&HazardScenario::new([1, 0, 2, 0, 0, 0, 0])).unwrap();
        assert_eq!(l.present, [true, false, true, false, false, false, false]);
    }

    #[test]
    fn full_design_has_1458_scenarios() {
        let all = HazardScenario::enumerate_all();
        assert_eq!(all.len(), 3 * 2 * 3 * 3 * 3 * 3 * 3);
        assert_eq!(all.iter().filter(|s| s.is_normal()).count(), 1);
        assert!(all.iter().all(|s| s.validate() == ScenarioVerdict::Valid));
        // exhaustive: every vector in the 3^7 cube is either in the list or invalid
        let mut count = 0;
        for code in 0..3usize.pow(7) {
            let mut levels = [0u8; FACTORS];
            let mut c = code;
            for l in levels.iter_mut() {
                *l = (c % 3) as u8;
                c /= 3;
            }
            if HazardScenario::new(levels).validate() == ScenarioVerdict::Valid {
                count += 1;
            }
        }
        assert_eq!(count, 1458);
    }

    #[test]
    fn label_is_monotone_in_levels() {
        for s in HazardScenario::enumerate_all() {
            let base = label_from_scenario(&s).unwrap();
            for f in Factor::ALL {
                if s.level(f) == 0 {
                    let raised = s.with(f, *f.domain().last().unwrap());
                    let l = label_from_scenario(&raised).unwrap();
                    for g in Factor::ALL {
                        assert!(!base.is_present(g) || l.is_present(g));
                    }
                    assert!(l.is_present(f));
                }
            }
        }
    }

    #[test]
    fn every_label_pattern_is_achievable() {
        let mut seen = alloc::collections::BTreeSet::new();
        for s in HazardScenario::enumerate_all() {
            seen.insert(label_from_scenario(&s).unwrap().present);
        }
        assert_eq!(seen.len(), 1 << FACTORS);
    }

    #[test]
    fn sample_rejects_bad_shapes() {
        assert!(MTSSample::new(0, 4, alloc::vec![0.0; 40], Quality::Conforming).is_err());
        assert!(MTSSample::new(0, 8, alloc::vec![0.0; 79], Quality::Conforming).is_err());
        assert!(MTSSample::new(0, 8, alloc::vec![f64::NAN; 80], Quality::Conforming).is_err());
        assert!(MTSSample::new(0, 8, alloc::vec![0.0; 80], Quality::Conforming).is_ok());
    }
}
