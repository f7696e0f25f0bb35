use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use super::metrics::{compute_metrics_with, Baseline, StyleMetrics, METRIC_NAMES};
use super::record::SessionLog;
use super::TelemetryError;
use crate::agent::PersonalityProfile;
use crate::sim::{run_headless, ControllerSpec, ProfileSpec, ReplaySource, ScenarioSpec, SimError};

/// Loss added when a metric is defined for one run and not the other.
pub const MISSING_METRIC_PENALTY: f64 = 100.0;

/// Candidate values per fitted parameter (field names as serialized);
/// every other parameter stays at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitGrid {
    pub base: PersonalityProfile,
    pub axes: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCandidate {
    pub params: BTreeMap<String, f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitResult {
    pub profile: PersonalityProfile,
    pub params: BTreeMap<String, f64>,
    pub loss: f64,
    /// Every candidate with its loss, in grid order.
    pub candidates: Vec<FitCandidate>,
}

/// Sum of squared baseline-scaled differences over the raw metrics.
pub fn metric_loss(agent: &StyleMetrics, human: &StyleMetrics, baseline: &Baseline) -> f64 {
    METRIC_NAMES
        .iter()
        .map(|name| match (agent.get(name), human.get(name)) {
            (Some(a), Some(h)) => ((a - h) / baseline.scale(name)).powi(2),
            (None, None) => 0.0,
            _ => MISSING_METRIC_PENALTY,
        })
        .sum()
}

/// Apply named parameter values to a profile.
pub fn with_params(base: &PersonalityProfile, params: &BTreeMap<String, f64>) -> Result<PersonalityProfile, TelemetryError> {
    let mut v = serde_json::to_value(base).expect("profile serializes");
    let obj = v.as_object_mut().expect("profile is an object");
    for (k, x) in params {
        if !obj.contains_key(k) {
            return Err(TelemetryError::Schema(format!("unknown profile parameter {k:?}")));
        }
        obj.insert(k.clone(), serde_json::Value::from(*x));
    }
    let p: PersonalityProfile = serde_json::from_value(v).map_err(|e| TelemetryError::Schema(e.to_string()))?;
    p.validate().map_err(|e| TelemetryError::Sim(SimError::Agent(e)))?;
    Ok(p)
}

/// Cartesian product of the axes in key order; the last axis varies fastest.
fn grid_points(axes: &BTreeMap<String, Vec<f64>>) -> Vec<BTreeMap<String, f64>> {
    let mut points = vec![BTreeMap::new()];
    for (name, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(name.clone(), *v);
                    q
                })
            })
            .collect();
    }
    points
}

/// Road lanes the subject drove through, in order, cut to one cycle when
/// the drive returns to its first lane.
pub fn route_from_log(log: &SessionLog, graph: &crate::map::MapGraph) -> Vec<String> {
    let mut seq: Vec<String> = Vec::new();
    for r in log.vehicle_records(&log.header.subject) {
        if !r.on_road() || graph.lane(&r.lane_id).is_none_or(|l| l.is_connector()) {
            continue;
        }
        if seq.last() != Some(&r.lane_id) {
            seq.push(r.lane_id.clone());
        }
    }
    if let Some(pos) = seq.iter().skip(1).position(|l| *l == seq[0]) {
        seq.truncate(pos + 1);
    }
    seq
}

/// Exhaustive grid search for the profile whose agent, driving the
/// subject's vehicle in `scenario`, best reproduces the log's metrics.
/// Ties go to the lexicographically smallest parameter tuple.
pub fn fit_profile(
    log: &SessionLog,
    scenario: &ScenarioSpec,
    grid: &FitGrid,
    base_dir: Option<&Path>,
    source: &(dyn ReplaySource + Sync),
    baseline: &Baseline,
) -> Result<FitResult, TelemetryError> {
    if grid.axes.is_empty() {
        return Err(TelemetryError::EmptyGrid("all parameters".into()));
    }
    if let Some((name, _)) = grid.axes.iter().find(|(_, v)| v.is_empty()) {
        return Err(TelemetryError::EmptyGrid(name.clone()));
    }
    let (_, graph) = scenario.resolve_map(base_dir)?;
    if graph.digest != log.header.map_digest {
        return Err(TelemetryError::DigestMismatch {
            expected: log.header.map_digest.clone(),
            actual: graph.digest.clone(),
        });
    }
    let subject = log.header.subject.clone();
    let spec = scenario
        .vehicle(&subject)
        .ok_or_else(|| TelemetryError::Sim(SimError::UnknownVehicle(subject.clone())))?;
    let route = match &spec.controller {
        ControllerSpec::Agent { route: Some(r), .. } => r.clone(),
        _ => route_from_log(log, &graph),
    };
    let human = compute_metrics_with(log, &graph, baseline)?;

    let points = grid_points(&grid.axes);
    let profiles = points
        .iter()
        .map(|p| with_params(&grid.base, p))
        .collect::<Result<Vec<_>, _>>()?;
    let losses: Vec<Result<f64, TelemetryError>> = profiles
        .par_iter()
        .map(|profile| {
            let mut s = scenario.clone();
            s.subject = Some(subject.clone());
            let v = s.vehicle_mut(&subject).expect("subject present");
            v.controller = ControllerSpec::Agent {
                profile: ProfileSpec::Explicit(*profile),
                route: (!route.is_empty()).then(|| route.clone()),
            };
            let run = run_headless(&s, base_dir, source)?;
            let m = compute_metrics_with(&run, &graph, baseline)?;
            Ok(metric_loss(&m, &human, baseline))
        })
        .collect();

    let mut candidates = Vec::with_capacity(points.len());
    for (params, loss) in points.into_iter().zip(losses) {
        candidates.push(FitCandidate { params, loss: loss? });
    }
    let tuple = |c: &FitCandidate| c.params.values().copied().collect::<Vec<f64>>();
    let best = candidates
        .iter()
        .enumerate()
        .min_by(|(_, x), (_, y)| {
            x.loss.total_cmp(&y.loss).then_with(|| {
                tuple(x)
                    .iter()
                    .zip(tuple(y).iter())
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        })
        .map(|(i, _)| i)
        .expect("grid is non-empty");
    let chosen = candidates[best].clone();
    Ok(FitResult {
        profile: with_params(&grid.base, &chosen.params)?,
        params: chosen.params,
        loss: chosen.loss,
        candidates,
    })
}
