//! Step performance curves and the failure-episode metrics FD, RE, PR, RR.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{ComputationTask, TaskStatus};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.75;
pub const DEFAULT_WINDOW: f64 = 400.0;

/// Hold-last-value step function through `(time, P)` points. The value on
/// `[t_i, t_{i+1})` is `P_i`, and the last value holds forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceCurve {
    points: Vec<(f64, f64)>,
}

impl PerformanceCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("performance curve"));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidParameter(alloc::format!("curve times not increasing at t = {}", w[1].0)));
            }
        }
        if points.iter().any(|&(t, p)| !t.is_finite() || !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidParameter("curve values must lie in [0, 1] at finite times".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn start(&self) -> f64 {
        self.points[0].0
    }

    /// `None` before the first point.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let k = self.points.partition_point(|&(pt, _)| pt <= t);
        if k == 0 {
            None
        } else {
            Some(self.points[k - 1].1)
        }
    }

    /// Exact integral over `[a, b]`, with `a` clipped to the first point.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let a = a.max(self.start());
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        for (i, &(t, p)) in self.points.iter().enumerate() {
            let end = self.points.get(i + 1).map_or(f64::INFINITY, |q| q.0);
            let lo = t.max(a);
            let hi = end.min(b);
            if hi > lo {
                total += p * (hi - lo);
            }
        }
        total
    }
}

/// One point per completed task at its completion time, valued at the best
/// F1 of the three deployed pipelines. Equal completion times keep the later task.
pub fn build_curve(tasks: &[ComputationTask]) -> Result<PerformanceCurve> {
    let mut pts: Vec<(f64, f64)> = tasks
        .iter()
        .filter(|t| t.status == TaskStatus::Completed)
        .filter_map(|t| t.performance.as_ref().map(|p| (t.end_time, p.best_f1())))
        .collect();
    if pts.is_empty() {
        return Err(Error::Empty("completed tasks"));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        match merged.last_mut() {
            Some(last) if last.0 == p.0 => *last = p,
            _ => merged.push(p),
        }
    }
    PerformanceCurve::new(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBounds {
    pub t1: f64,
    pub t2: f64,
    /// `None` while the curve has not recovered.
    pub t3: Option<f64>,
    /// Whether `t2` came from a mitigation event.
    pub mitigated: bool,
}

/// Scans for failure episodes: `t1` is a point below `p_s` following a point
/// at or above it, `t3` the next point back at or above `p_s`, and `t2` the
/// first mitigation event in `[t1, t3]` (else `t1`).
pub fn detect_episodes(curve: &PerformanceCurve, p_s: f64, mitigations: &[f64]) -> Vec<EpisodeBounds> {
    let pts = curve.points();
    let mut out = Vec::new();
    let mut i = 1;
    while i < pts.len() {
        if pts[i].1 < p_s && pts[i - 1].1 >= p_s {
            let t1 = pts[i].0;
            let t3 = pts[i + 1..].iter().find(|p| p.1 >= p_s).map(|p| p.0);
            let upper = t3.unwrap_or(f64::INFINITY);
            let m = mitigations.iter().copied().filter(|&m| m >= t1 && m <= upper).fold(None, |acc: Option<f64>, m| {
                Some(acc.map_or(m, |a| a.min(m)))
            });
            out.push(EpisodeBounds { t1, t2: m.unwrap_or(t1), t3, mitigated: m.is_some() });
            match t3 {
                Some(t) => i = pts.partition_point(|p| p.0 <= t),
                None => break,
            }
        } else {
            i += 1;
        }
    }
    out
}

pub fn detect_episode(curve: &PerformanceCurve, p_s: f64, mitigations: &[f64]) -> Option<EpisodeBounds> {
    detect_episodes(curve, p_s, mitigations).into_iter().next()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceEpisode {
    pub t1: f64,
    pub t2: f64,
    pub t3: Option<f64>,
    pub p_s: f64,
    pub delta_t: f64,
    pub fd: Option<f64>,
    pub re: Option<f64>,
    pub pr: Option<f64>,
    pub rr: Option<f64>,
    /// The pre-failure window started before the first curve point.
    pub window_clipped: bool,
    /// `t3` was set to the observation horizon because the curve never recovered.
    pub censored: bool,
}

impl ResilienceEpisode {
    pub fn is_open(&self) -> bool {
        self.t3.is_none()
    }

    /// `FD = ..., PR = ..., RR = ...`, with `n/a` for undefined values.
    pub fn summary_line(&self) -> String {
        let f = |v: Option<f64>, digits: usize| match v {
            Some(x) => alloc::format!("{x:.digits$}"),
            None => "n/a".into(),
        };
        alloc::format!("FD = {}, PR = {}, RR = {}", f(self.fd, 2), f(self.pr, 3), f(self.rr, 3))
    }
}

pub fn compute_metrics(bounds: &EpisodeBounds, curve: &PerformanceCurve, p_s: f64, delta_t: f64) -> Result<ResilienceEpisode> {
    fill(bounds, bounds.t3, false, curve, p_s, delta_t)
}

/// As [`compute_metrics`], but an open episode is closed at `horizon`.
pub fn compute_metrics_censored(
    bounds: &EpisodeBounds,
    curve: &PerformanceCurve,
    p_s: f64,
    delta_t: f64,
    horizon: f64,
) -> Result<ResilienceEpisode> {
    match bounds.t3 {
        Some(_) => compute_metrics(bounds, curve, p_s, delta_t),
        None if horizon > bounds.t1 => fill(bounds, Some(horizon), true, curve, p_s, delta_t),
        None => Err(Error::InvalidParameter(alloc::format!("horizon {horizon} precedes failure at {}", bounds.t1))),
    }
}

fn fill(bounds: &EpisodeBounds, t3: Option<f64>, censored: bool, curve: &PerformanceCurve, p_s: f64, delta_t: f64) -> Result<ResilienceEpisode> {
    if !(delta_t > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("window {delta_t} must be positive")));
    }
    let mut ep = ResilienceEpisode {
        t1: bounds.t1,
        t2: bounds.t2,
        t3: bounds.t3,
        p_s,
        delta_t,
        fd: None,
        re: None,
        pr: None,
        rr: None,
        window_clipped: false,
        censored,
    };
    let Some(t3) = t3 else {
        return Ok(ep);
    };
    ep.t3 = Some(t3);
    let (t1, t2) = (bounds.t1, bounds.t2);
    let fd = t3 - t1;
    if !(fd > 0.0) || t2 < t1 || t2 > t3 {
        return Err(Error::InvalidParameter(alloc::format!("episode bounds {t1} <= {t2} <= {t3} violated")));
    }
    ep.fd = Some(fd);
    if bounds.mitigated {
        ep.re = Some((t3 - t2) / fd);
    }
    ep.pr = Some(curve.integrate(t1, t3) / fd);
    let pre_start = (t1 - delta_t).max(curve.start());
    ep.window_clipped = pre_start > t1 - delta_t;
    let pre_len = t1 - pre_start;
    let pre = curve.integrate(pre_start, t1);
    if pre_len > 0.0 && pre > 0.0 {
        let post_mean = curve.integrate(t3, t3 + delta_t) / delta_t;
        ep.rr = Some(post_mean / (pre / pre_len));
    }
    Ok(ep)
}
