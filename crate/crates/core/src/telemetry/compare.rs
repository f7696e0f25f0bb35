use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::metrics::{compute_metrics_with, Baseline, METRIC_NAMES};
use super::record::{SessionLog, TelemetryRecord};
use super::TelemetryError;
use crate::map::MapGraph;

/// Spacing of the arc-length resampling used for trajectory RMSE.
pub const RESAMPLE_STEP: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricDelta {
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// |b - a|
    pub abs_diff: Option<f64>,
    /// (b - a) / |a|; absent when a is zero or missing.
    pub rel_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonReport {
    pub session_a: String,
    pub session_b: String,
    pub ks_speed: f64,
    pub trajectory_rmse: f64,
    /// Arc length over which the two paths were compared.
    pub compared_length: f64,
    pub metrics: BTreeMap<String, MetricDelta>,
}

/// Two-sample Kolmogorov-Smirnov statistic: the largest gap between the
/// empirical distribution functions.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d.clamp(0.0, 1.0)
}

/// Cumulative arc length of a polyline.
fn arc_lengths(pts: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            acc += (p.0 - pts[i - 1].0).hypot(p.1 - pts[i - 1].1);
        }
        out.push(acc);
    }
    out
}

/// Point at arc length `s` along the polyline (clamped to its ends).
fn point_at(pts: &[(f64, f64)], cum: &[f64], s: f64) -> (f64, f64) {
    let i = cum.partition_point(|c| *c < s);
    if i == 0 {
        return pts[0];
    }
    if i >= pts.len() {
        return *pts.last().expect("non-empty");
    }
    let (s0, s1) = (cum[i - 1], cum[i]);
    let f = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
    let (p, q) = (pts[i - 1], pts[i]);
    (p.0 + f * (q.0 - p.0), p.1 + f * (q.1 - p.1))
}

/// RMSE between two paths resampled every `step` metres of arc length over
/// their common range. Returns (rmse, compared length).
pub fn trajectory_rmse(a: &[(f64, f64)], b: &[(f64, f64)], step: f64) -> (f64, f64) {
    if a.is_empty() || b.is_empty() {
        return (0.0, 0.0);
    }
    let (ca, cb) = (arc_lengths(a), arc_lengths(b));
    let len = ca.last().copied().unwrap_or(0.0).min(cb.last().copied().unwrap_or(0.0));
    let n = (len / step).floor() as usize;
    let mut sum = 0.0;
    for k in 0..=n {
        let s = k as f64 * step;
        let (p, q) = (point_at(a, &ca, s), point_at(b, &cb, s));
        sum += (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
    }
    ((sum / (n + 1) as f64).sqrt(), len)
}

fn subject_rows(log: &SessionLog) -> Vec<&TelemetryRecord> {
    log.vehicle_records(&log.header.subject).collect()
}

pub fn compare_sessions(a: &SessionLog, b: &SessionLog, graph: &MapGraph) -> Result<ComparisonReport, TelemetryError> {
    compare_sessions_with(a, b, graph, &Baseline::shipped())
}

pub fn compare_sessions_with(
    a: &SessionLog,
    b: &SessionLog,
    graph: &MapGraph,
    baseline: &Baseline,
) -> Result<ComparisonReport, TelemetryError> {
    for log in [a, b] {
        if log.header.map_digest != graph.digest {
            return Err(TelemetryError::DigestMismatch {
                expected: graph.digest.clone(),
                actual: log.header.map_digest.clone(),
            });
        }
    }
    let (ra, rb) = (subject_rows(a), subject_rows(b));
    let start = |rows: &[&TelemetryRecord]| rows.first().map(|r| r.lane_id.clone());
    if start(&ra) != start(&rb) {
        return Err(TelemetryError::RouteMismatch(format!(
            "start lanes differ: {:?} vs {:?}",
            start(&ra),
            start(&rb)
        )));
    }
    let duration = |log: &SessionLog| log.tick_count() as f64 * log.header.physics_dt;
    if (duration(a) - duration(b)).abs() > 1e-9 {
        return Err(TelemetryError::RouteMismatch(format!(
            "durations differ: {} s vs {} s",
            duration(a),
            duration(b)
        )));
    }

    let va: Vec<f64> = ra.iter().map(|r| r.v).collect();
    let vb: Vec<f64> = rb.iter().map(|r| r.v).collect();
    let pa: Vec<(f64, f64)> = ra.iter().map(|r| (r.x, r.y)).collect();
    let pb: Vec<(f64, f64)> = rb.iter().map(|r| (r.x, r.y)).collect();
    let (rmse, compared_length) = trajectory_rmse(&pa, &pb, RESAMPLE_STEP);

    let ma = compute_metrics_with(a, graph, baseline)?;
    let mb = compute_metrics_with(b, graph, baseline)?;
    let mut metrics = BTreeMap::new();
    for name in METRIC_NAMES.iter().copied().chain(["aggressiveness_index"]) {
        let (x, y) = (ma.get(name), mb.get(name));
        let abs_diff = x.zip(y).map(|(x, y)| (y - x).abs());
        let rel_diff = x.zip(y).and_then(|(x, y)| (x != 0.0).then(|| (y - x) / x.abs()));
        metrics.insert(
            name.to_string(),
            MetricDelta {
                a: x,
                b: y,
                abs_diff,
                rel_diff,
            },
        );
    }
    Ok(ComparisonReport {
        session_a: a.header.session_id.clone(),
        session_b: b.header.session_id.clone(),
        ks_speed: ks_statistic(&va, &vb),
        trajectory_rmse: rmse,
        compared_length,
        metrics,
    })
}
