use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::record::{SessionLog, TelemetryRecord};
use super::TelemetryError;
use crate::map::MapGraph;
use crate::sim::EventKind;

/// Leaders further than this (bumper to bumper) are ignored.
pub const HEADWAY_RANGE: f64 = 3.0;
/// Headway is undefined at standstill; samples below this speed are skipped.
pub const HEADWAY_MIN_SPEED: f64 = 0.05;
pub const JERK_TAU: f64 = 0.1;
pub const STD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleMetrics {
    /// `None` when the subject never followed a leader while moving.
    pub mean_time_headway: Option<f64>,
    pub p10_time_headway: Option<f64>,
    pub red_light_entries: u32,
    pub stop_sign_violations: u32,
    pub frac_time_over_limit: f64,
    /// Mean of (v - limit) over the ticks spent above the limit.
    pub mean_exceedance: f64,
    pub rms_jerk: f64,
    pub rms_lane_dev: f64,
    pub mean_speed: f64,
    pub aggressiveness_index: f64,
}

/// Names of the raw metrics, in report order.
pub const METRIC_NAMES: [&str; 9] = [
    "mean_time_headway",
    "p10_time_headway",
    "red_light_entries",
    "stop_sign_violations",
    "frac_time_over_limit",
    "mean_exceedance",
    "rms_jerk",
    "rms_lane_dev",
    "mean_speed",
];

/// Metrics entering the aggressiveness index and the sign each enters with.
pub const INDEX_TERMS: [(&str, f64); 5] = [
    ("mean_time_headway", -1.0),
    ("frac_time_over_limit", 1.0),
    ("rms_jerk", 1.0),
    ("red_light_entries", 1.0),
    ("stop_sign_violations", 1.0),
];

impl StyleMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "mean_time_headway" => self.mean_time_headway,
            "p10_time_headway" => self.p10_time_headway,
            "red_light_entries" => Some(self.red_light_entries as f64),
            "stop_sign_violations" => Some(self.stop_sign_violations as f64),
            "frac_time_over_limit" => Some(self.frac_time_over_limit),
            "mean_exceedance" => Some(self.mean_exceedance),
            "rms_jerk" => Some(self.rms_jerk),
            "rms_lane_dev" => Some(self.rms_lane_dev),
            "mean_speed" => Some(self.mean_speed),
            "aggressiveness_index" => Some(self.aggressiveness_index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

/// Reference population for z-scores: metric name to {mean, std}.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Baseline(pub BTreeMap<String, MetricStats>);

const SHIPPED_BASELINE: &str = include_str!("../../data/baseline.json");

impl Baseline {
    /// The baseline shipped with the library (50 seeded runs per preset on
    /// the standard scenario).
    pub fn shipped() -> Self {
        serde_json::from_str(SHIPPED_BASELINE).expect("shipped baseline parses")
    }

    pub fn parse(text: &str) -> Result<Self, TelemetryError> {
        serde_json::from_str(text).map_err(|e| TelemetryError::Schema(format!("baseline: {e}")))
    }

    /// Standard deviation used to scale a metric, floored.
    pub fn scale(&self, name: &str) -> f64 {
        self.0.get(name).map_or(1.0, |s| s.std).max(STD_FLOOR)
    }

    pub fn z(&self, name: &str, value: f64) -> f64 {
        let mean = self.0.get(name).map_or(0.0, |s| s.mean);
        (value - mean) / self.scale(name)
    }

    /// Sample mean and standard deviation of each metric over a population
    /// of runs. Absent headway values are left out of their statistic.
    pub fn from_population(metrics: &[StyleMetrics]) -> Self {
        let mut out = BTreeMap::new();
        for name in METRIC_NAMES {
            let xs: Vec<f64> = metrics.iter().filter_map(|m| m.get(name)).collect();
            if xs.is_empty() {
                continue;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = if xs.len() > 1 {
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            out.insert(
                name.to_string(),
                MetricStats {
                    mean: crate::canon::quantize(mean),
                    std: crate::canon::quantize(var.sqrt()),
                },
            );
        }
        Baseline(out)
    }
}

/// Mean z-score of the index terms; a missing headway contributes zero.
pub fn aggressiveness_index(m: &StyleMetrics, baseline: &Baseline) -> f64 {
    let total: f64 = INDEX_TERMS
        .iter()
        .map(|(name, sign)| m.get(name).map_or(0.0, |v| sign * baseline.z(name, v)))
        .sum();
    total / INDEX_TERMS.len() as f64
}

/// Linear-interpolation percentile of a sorted sample, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Shortest distance along successor links from (lane, s) forward to
/// (to_lane, to_s), if within `max`.
pub fn along_distance(graph: &MapGraph, lane: &str, s: f64, to_lane: &str, to_s: f64, max: f64) -> Option<f64> {
    if lane == to_lane && to_s >= s {
        return Some(to_s - s);
    }
    let start = graph.lane(lane)?;
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    // distance from the query point to the start of each successor
    for succ in &start.successors {
        heap.push(Reverse((OrdDist(start.length - s), succ.as_str())));
    }
    while let Some(Reverse((OrdDist(d), id))) = heap.pop() {
        if d > max {
            break;
        }
        if best.contains_key(id) {
            continue;
        }
        best.insert(id, d);
        if id == to_lane {
            let total = d + to_s;
            return (total <= max).then_some(total);
        }
        if let Some(l) = graph.lane(id) {
            for succ in &l.successors {
                heap.push(Reverse((OrdDist(d + l.length), succ.as_str())));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdDist(f64);

impl Eq for OrdDist {}

impl PartialOrd for OrdDist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdDist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Bumper-to-bumper gap to the nearest vehicle ahead of `ego` along the
/// lane graph at the same tick.
pub fn leader_gap(log: &SessionLog, graph: &MapGraph, ego: &TelemetryRecord, same_tick: &[TelemetryRecord]) -> Option<f64> {
    if !ego.on_road() {
        return None;
    }
    let ego_params = log.header.params_of(&ego.vehicle_id)?;
    let fo = ego_params.front_offset();
    let mut best: Option<f64> = None;
    for other in same_tick.iter().filter(|o| o.vehicle_id != ego.vehicle_id && o.on_road()) {
        let Some(op) = log.header.params_of(&other.vehicle_id) else {
            continue;
        };
        let ro = op.rear_offset();
        let Some(dist) = along_distance(graph, &ego.lane_id, ego.s, &other.lane_id, other.s, HEADWAY_RANGE + fo + ro)
        else {
            continue;
        };
        if dist <= 0.0 {
            continue;
        }
        let gap = dist - fo - ro;
        if gap <= HEADWAY_RANGE && best.is_none_or(|b| gap < b) {
            best = Some(gap);
        }
    }
    best
}

/// Driving-style metrics of the log's subject vehicle.
pub fn compute_metrics(log: &SessionLog, graph: &MapGraph) -> Result<StyleMetrics, TelemetryError> {
    compute_metrics_with(log, graph, &Baseline::shipped())
}

pub fn compute_metrics_with(log: &SessionLog, graph: &MapGraph, baseline: &Baseline) -> Result<StyleMetrics, TelemetryError> {
    if graph.digest != log.header.map_digest {
        return Err(TelemetryError::DigestMismatch {
            expected: log.header.map_digest.clone(),
            actual: graph.digest.clone(),
        });
    }
    let subject = log.header.subject.as_str();
    let dt = log.header.physics_dt;

    // records are sorted by (tick, vehicle_id): split into per-tick slices
    let mut by_tick: Vec<&[TelemetryRecord]> = Vec::new();
    let mut start = 0;
    for i in 1..=log.records.len() {
        if i == log.records.len() || log.records[i].tick != log.records[start].tick {
            by_tick.push(&log.records[start..i]);
            start = i;
        }
    }
    let mut rows = Vec::new();
    let mut headways = Vec::new();
    for tick in &by_tick {
        let Some(ego) = tick.iter().find(|r| r.vehicle_id == subject) else {
            continue;
        };
        rows.push(ego);
        if ego.v > HEADWAY_MIN_SPEED {
            if let Some(gap) = leader_gap(log, graph, ego, tick) {
                headways.push(gap / ego.v);
            }
        }
    }
    if rows.is_empty() {
        return Err(TelemetryError::EmptyLog);
    }
    let n = rows.len() as f64;

    headways.sort_by(f64::total_cmp);
    let mean_time_headway = (!headways.is_empty()).then(|| headways.iter().sum::<f64>() / headways.len() as f64);
    let p10_time_headway = percentile(&headways, 0.1);

    let count = |kind: EventKind| log.events.iter().filter(|e| e.kind == kind && e.involves(subject)).count() as u32;

    let on_road: Vec<&&TelemetryRecord> = rows.iter().filter(|r| r.on_road()).collect();
    let over: Vec<f64> = on_road
        .iter()
        .filter(|r| r.v > r.current_limit)
        .map(|r| r.v - r.current_limit)
        .collect();
    let frac_time_over_limit = if on_road.is_empty() {
        0.0
    } else {
        over.len() as f64 / on_road.len() as f64
    };
    let mean_exceedance = if over.is_empty() {
        0.0
    } else {
        over.iter().sum::<f64>() / over.len() as f64
    };

    // low-pass the acceleration, then difference it
    let k = 1.0 - (-dt / JERK_TAU).exp();
    let mut a_f = rows[0].a;
    let mut jerk_sq = 0.0;
    for r in &rows[1..] {
        let prev = a_f;
        a_f += k * (r.a - a_f);
        jerk_sq += ((a_f - prev) / dt).powi(2);
    }
    let rms_jerk = if rows.len() > 1 {
        (jerk_sq / (rows.len() - 1) as f64).sqrt()
    } else {
        0.0
    };

    let rms_lane_dev = if on_road.is_empty() {
        0.0
    } else {
        (on_road.iter().map(|r| r.lateral_offset.powi(2)).sum::<f64>() / on_road.len() as f64).sqrt()
    };
    let mean_speed = rows.iter().map(|r| r.v).sum::<f64>() / n;

    let mut m = StyleMetrics {
        mean_time_headway,
        p10_time_headway,
        red_light_entries: count(EventKind::RedLightEntry),
        stop_sign_violations: count(EventKind::StopSignViolation),
        frac_time_over_limit,
        mean_exceedance,
        rms_jerk,
        rms_lane_dev,
        mean_speed,
        aggressiveness_index: 0.0,
    };
    m.aggressiveness_index = aggressiveness_index(&m, baseline);
    Ok(m)
}
