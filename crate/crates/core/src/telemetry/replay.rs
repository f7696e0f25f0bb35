use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::io::{read_log, session_file, SCENARIO_EXT};
use super::record::{SessionLog, TelemetryRecord, COLUMNS};
use super::TelemetryError;
use crate::canon::fmt_real;
use crate::sim::{load_scenario, replay_commands, ControllerSpec, MemoryReplaySource, ScenarioSpec, Simulation};

/// First point where a regenerated log departs from the recorded one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub tick: Option<u64>,
    pub what: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tick {
            Some(t) => write!(f, "first mismatch at tick {t}: {}", self.what),
            None => write!(f, "mismatch: {}", self.what),
        }
    }
}

/// Re-run a session. Agents are re-evaluated; every other vehicle gets its
/// recorded commands applied verbatim.
pub fn regenerate(log: &SessionLog, scenario: &ScenarioSpec, base_dir: Option<&Path>) -> Result<SessionLog, TelemetryError> {
    let mut direct = BTreeMap::new();
    for v in &scenario.vehicles {
        if !matches!(v.controller, ControllerSpec::Agent { .. }) {
            direct.insert(v.vehicle_id.clone(), replay_commands(log, &v.vehicle_id)?);
        }
    }
    let mut sim = Simulation::with_overrides(scenario, base_dir, &MemoryReplaySource::default(), direct)?;
    // interactive sessions can end before the scenario duration
    let ticks = log.tick_count();
    let header = sim.header_mut();
    header.session_id = log.header.session_id.clone();
    header.created_at = log.header.created_at.clone();
    while !sim.is_finished() && sim.world().tick < ticks {
        sim.tick()?;
    }
    sim.finish();
    let out = sim.into_log();
    Ok(out)
}

fn column_diff(a: &TelemetryRecord, b: &TelemetryRecord) -> Option<&'static str> {
    let reals = |r: &TelemetryRecord| {
        [
            r.sim_t,
            r.x,
            r.y,
            r.theta,
            r.v,
            r.a,
            r.steer_cmd,
            r.throttle_cmd,
            r.brake_cmd,
            r.encoder_v,
            r.fused_v,
            r.fused_a,
            r.s,
            r.lateral_offset,
            r.current_limit,
        ]
        .map(fmt_real)
    };
    const REAL_COLS: [&str; 15] = [
        "sim_t",
        "x",
        "y",
        "theta",
        "v",
        "a",
        "steer_cmd",
        "throttle_cmd",
        "brake_cmd",
        "encoder_v",
        "fused_v",
        "fused_a",
        "s",
        "lateral_offset",
        "current_limit",
    ];
    if a.vehicle_id != b.vehicle_id {
        return Some(COLUMNS[2]);
    }
    if a.lane_id != b.lane_id {
        return Some("lane_id");
    }
    if a.light_ahead != b.light_ahead {
        return Some("light_ahead");
    }
    let (ra, rb) = (reals(a), reals(b));
    (0..REAL_COLS.len()).find(|i| ra[*i] != rb[*i]).map(|i| REAL_COLS[i])
}

/// Compare a recorded log with its regeneration, reporting the first
/// difference in tick order.
pub fn first_mismatch(recorded: &SessionLog, regenerated: &SessionLog) -> Option<Mismatch> {
    if recorded.header != regenerated.header {
        return Some(Mismatch {
            tick: None,
            what: "session header differs from the regenerated header".into(),
        });
    }
    let rec_event_tick = |log: &SessionLog, i: usize| log.events.get(i).map(|e| e.tick);
    let event_diff = recorded
        .events
        .iter()
        .zip(&regenerated.events)
        .position(|(a, b)| a != b)
        .or_else(|| (recorded.events.len() != regenerated.events.len()).then(|| recorded.events.len().min(regenerated.events.len())));
    let event_tick = event_diff.and_then(|i| rec_event_tick(recorded, i).or_else(|| rec_event_tick(regenerated, i)));

    let row_diff = recorded
        .records
        .iter()
        .zip(&regenerated.records)
        .find_map(|(a, b)| {
            if a.tick != b.tick {
                return Some(Mismatch {
                    tick: Some(a.tick.min(b.tick)),
                    what: "row layout differs".into(),
                });
            }
            column_diff(a, b).map(|col| Mismatch {
                tick: Some(a.tick),
                what: format!("{} of {} recorded {} regenerated {}", col, a.vehicle_id, field(a, col), field(b, col)),
            })
        })
        .or_else(|| {
            (recorded.records.len() != regenerated.records.len()).then(|| Mismatch {
                tick: {
                    let i = recorded.records.len().min(regenerated.records.len());
                    recorded.records.get(i).or(regenerated.records.get(i)).map(|r| r.tick)
                },
                what: format!(
                    "row count differs: recorded {} regenerated {}",
                    recorded.records.len(),
                    regenerated.records.len()
                ),
            })
        });

    match (row_diff, event_tick) {
        (Some(r), Some(t)) if r.tick.is_some_and(|rt| rt <= t) => Some(r),
        (_, Some(t)) => Some(Mismatch {
            tick: Some(t),
            what: "event stream differs".into(),
        }),
        (r, None) => r,
    }
}

fn field(r: &TelemetryRecord, col: &str) -> String {
    match col {
        "vehicle_id" => r.vehicle_id.clone(),
        "lane_id" => format!("{:?}", r.lane_id),
        "light_ahead" => format!("{:?}", r.light_ahead),
        "sim_t" => fmt_real(r.sim_t),
        "x" => fmt_real(r.x),
        "y" => fmt_real(r.y),
        "theta" => fmt_real(r.theta),
        "v" => fmt_real(r.v),
        "a" => fmt_real(r.a),
        "steer_cmd" => fmt_real(r.steer_cmd),
        "throttle_cmd" => fmt_real(r.throttle_cmd),
        "brake_cmd" => fmt_real(r.brake_cmd),
        "encoder_v" => fmt_real(r.encoder_v),
        "fused_v" => fmt_real(r.fused_v),
        "fused_a" => fmt_real(r.fused_a),
        "s" => fmt_real(r.s),
        "lateral_offset" => fmt_real(r.lateral_offset),
        "current_limit" => fmt_real(r.current_limit),
        _ => String::new(),
    }
}

/// Read a stored session, check its scenario and map digests, regenerate
/// it and report the first mismatch (`None` when it replays exactly).
/// Map files referenced by the scenario resolve against `map_dir`, or the
/// session directory when absent.
pub fn verify_session(dir: &Path, session_id: &str, map_dir: Option<&Path>) -> Result<Option<Mismatch>, TelemetryError> {
    let log = read_log(dir, session_id)?;
    let scenario = load_scenario(&session_file(dir, session_id, SCENARIO_EXT))?.normalized()?;
    let digest = scenario.digest();
    if digest != log.header.scenario_digest {
        return Err(TelemetryError::DigestMismatch {
            expected: log.header.scenario_digest.clone(),
            actual: digest,
        });
    }
    let (map_spec, _) = scenario.resolve_map(Some(map_dir.unwrap_or(dir)))?;
    if map_spec.digest() != log.header.map_digest {
        return Err(TelemetryError::DigestMismatch {
            expected: log.header.map_digest.clone(),
            actual: map_spec.digest(),
        });
    }
    let regenerated = regenerate(&log, &scenario, Some(map_dir.unwrap_or(dir)))?;
    Ok(first_mismatch(&log, &regenerated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_headless, save_session, standard_scenario, ProfileSpec};
    use crate::telemetry::{session_file, telemetry_csv, TELEMETRY_EXT};

    fn short_run() -> (ScenarioSpec, SessionLog) {
        let mut s = standard_scenario(ProfileSpec::Preset("DEFENSIVE".into()), 3);
        s.duration = 3.0;
        let s = s.normalized().unwrap();
        let log = run_headless(&s, None, &MemoryReplaySource::default()).unwrap();
        (s, log)
    }

    #[test]
    fn stored_session_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let (s, log) = short_run();
        let path = save_session(dir.path(), &log, &s).unwrap();
        let id = path.file_name().unwrap().to_str().unwrap();
        assert_eq!(verify_session(dir.path(), id, None).unwrap(), None);
    }

    #[test]
    fn tampered_value_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let (s, mut log) = short_run();
        let id = save_session(dir.path(), &log, &s).unwrap();
        let id = id.file_name().unwrap().to_str().unwrap().to_string();
        let i = log.records.iter().position(|r| r.tick == 40).unwrap();
        log.records[i].x += 0.001;
        std::fs::write(session_file(dir.path(), &id, TELEMETRY_EXT), telemetry_csv(&log.records).unwrap()).unwrap();
        let m = verify_session(dir.path(), &id, None).unwrap().unwrap();
        assert_eq!(m.tick, Some(40));
        assert!(m.to_string().starts_with("first mismatch at tick 40"));
    }

    #[test]
    fn truncated_log_reports_row_count() {
        let (s, log) = short_run();
        let mut short = log.clone();
        short.records.pop();
        let m = first_mismatch(&short, &regenerate(&log, &s, None).unwrap()).unwrap();
        assert!(m.what.contains("row count"));
    }
}
