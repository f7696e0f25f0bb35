//! Fixed-cycle traffic lights and speed-limit / signal queries over the
//! lane graph.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;

use crate::map::{MapError, MapGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightPhaseSchedule {
    pub green_s: f64,
    pub amber_s: f64,
    pub red_s: f64,
    pub offset_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Green,
    Amber,
    Red,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Green => "green",
            Phase::Amber => "amber",
            Phase::Red => "red",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightState {
    pub phase: Phase,
    pub time_to_change: f64,
}

/// Boundaries closer than this (relative to the cycle) snap onto the
/// boundary so tick-sampled phases match the schedule exactly.
const SNAP: f64 = 1e-9;

impl LightPhaseSchedule {
    pub fn cycle(&self) -> f64 {
        self.green_s + self.amber_s + self.red_s
    }

    /// Phase and remaining time at `t`. Intervals are half-open: a phase
    /// boundary belongs to the later phase.
    pub fn state_at(&self, t: f64) -> LightState {
        let cycle = self.cycle();
        let tol = SNAP * cycle.max(1.0);
        let mut p = (t - self.offset_s).rem_euclid(cycle);
        if cycle - p <= tol {
            p = 0.0;
        }
        let bounds = [
            (Phase::Green, 0.0, self.green_s),
            (Phase::Amber, self.green_s, self.green_s + self.amber_s),
            (Phase::Red, self.green_s + self.amber_s, cycle),
        ];
        for (phase, start, end) in bounds {
            if end - start <= 0.0 {
                continue;
            }
            if p >= start - tol && p < end - tol {
                let remaining = (end - p).clamp(0.0, end - start);
                return LightState {
                    phase,
                    time_to_change: remaining,
                };
            }
        }
        // only reachable through rounding at the very end of the cycle
        LightState {
            phase: Phase::Red,
            time_to_change: 0.0,
        }
    }
}

pub fn light_state_at(schedule: &LightPhaseSchedule, t: f64) -> LightState {
    schedule.state_at(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpcomingLimit {
    pub limit: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimitView {
    pub current: f64,
    pub upcoming: Option<UpcomingLimit>,
}

/// Limit in force at `s` on `lane_id` plus the nearest change within
/// `lookahead`, searching downstream along the shortest continuation.
pub fn applicable_speed_limit(graph: &MapGraph, lane_id: &str, s: f64, lookahead: f64) -> Result<SpeedLimitView, MapError> {
    let lane = graph.lane_or_err(lane_id)?;
    let current = lane.limit_at(s);
    let horizon = s + lookahead;

    let mut best: Option<UpcomingLimit> = lane
        .limit_changes
        .iter()
        .find(|c| c.s > s && c.s <= horizon && c.new_limit != current)
        .map(|c| UpcomingLimit {
            limit: c.new_limit,
            distance: c.s - s,
        });

    if best.is_none() {
        // Dijkstra over successors; distances are to each lane's start.
        let mut dist: BTreeMap<String, f64> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        let first = lane.length - s;
        for succ in &lane.successors {
            heap.push(Reverse((OrdF64(first), succ.clone(), OrdF64(current))));
        }
        while let Some(Reverse((OrdF64(d), id, OrdF64(in_force)))) = heap.pop() {
            if d > lookahead {
                break;
            }
            if dist.contains_key(&id) {
                continue;
            }
            dist.insert(id.clone(), d);
            let next = graph.lane_or_err(&id)?;
            let candidate = if next.speed_limit != in_force {
                Some(UpcomingLimit {
                    limit: next.speed_limit,
                    distance: d,
                })
            } else {
                next.limit_changes
                    .iter()
                    .find(|c| c.new_limit != in_force && d + c.s <= lookahead)
                    .map(|c| UpcomingLimit {
                        limit: c.new_limit,
                        distance: d + c.s,
                    })
            };
            if let Some(c) = candidate {
                if c.distance > 0.0 && c.distance <= lookahead && best.is_none_or(|b| c.distance < b.distance) {
                    best = Some(c);
                }
                continue;
            }
            let out_limit = next.limit_at(next.length);
            for succ in &next.successors {
                if !dist.contains_key(succ) {
                    heap.push(Reverse((OrdF64(d + next.length), succ.clone(), OrdF64(out_limit))));
                }
            }
        }
    }
    Ok(SpeedLimitView { current, upcoming: best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRef {
    pub light_id: String,
    pub stop_line_s: f64,
}

/// The light governing the downstream end of a lane, if any.
pub fn signal_for_lane(graph: &MapGraph, lane_id: &str) -> Result<Option<SignalRef>, MapError> {
    graph.lane_or_err(lane_id)?;
    Ok(graph.lights.iter().find(|l| l.lane_id == lane_id).map(|l| SignalRef {
        light_id: l.light_id.clone(),
        stop_line_s: l.stop_line_s,
    }))
}

/// Totally ordered distance key for the search heap.
#[derive(Debug, Clone, Copy)]
struct OrdF64(f64);

impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{build_graph, generate_grid, parse_map};
    use proptest::prelude::*;

    const S: LightPhaseSchedule = LightPhaseSchedule {
        green_s: 8.0,
        amber_s: 2.0,
        red_s: 10.0,
        offset_s: 0.0,
    };

    #[test]
    fn lookup_examples() {
        assert_eq!(
            S.state_at(0.0),
            LightState {
                phase: Phase::Green,
                time_to_change: 8.0
            }
        );
        let s = S.state_at(9.0);
        assert_eq!(s.phase, Phase::Amber);
        assert!((s.time_to_change - 1.0).abs() < 1e-12);
        let shifted = LightPhaseSchedule { offset_s: 5.0, ..S };
        assert_eq!(
            shifted.state_at(25.0),
            LightState {
                phase: Phase::Green,
                time_to_change: 8.0
            }
        );
    }

    #[test]
    fn boundary_belongs_to_later_phase() {
        assert_eq!(S.state_at(8.0).phase, Phase::Amber);
        assert_eq!(S.state_at(10.0).phase, Phase::Red);
        assert_eq!(S.state_at(20.0).phase, Phase::Green);
        // tick-sampled boundary with accumulated rounding
        assert_eq!(S.state_at(800.0 * 0.01).phase, Phase::Amber);
    }

    #[test]
    fn zero_length_phase_is_skipped() {
        let no_amber = LightPhaseSchedule { amber_s: 0.0, ..S };
        assert_eq!(no_amber.state_at(8.0).phase, Phase::Red);
    }

    proptest! {
        #[test]
        fn periodic(t in 0.0f64..500.0, k in 1u32..5) {
            let a = S.state_at(t);
            let b = S.state_at(t + k as f64 * S.cycle());
            prop_assert_eq!(a.phase, b.phase);
            prop_assert!((a.time_to_change - b.time_to_change).abs() < 1e-6);
        }

        #[test]
        fn time_to_change_within_phase(t in 0.0f64..500.0) {
            let st = S.state_at(t);
            let dur = match st.phase { Phase::Green => 8.0, Phase::Amber => 2.0, Phase::Red => 10.0 };
            prop_assert!(st.time_to_change >= 0.0 && st.time_to_change <= dur);
        }
    }

    fn limit_map() -> MapGraph {
        let spec = parse_map(
            r#"{"name":"limits","scale_denominator":10,
                "nodes":[{"id":"A","x":0.0,"y":0.0},{"id":"B","x":5.0,"y":0.0}],
                "segments":[{"id":"s1","from_node":"A","to_node":"B","geometry":{"kind":"straight"},
                  "lanes_per_direction":1,"lane_width":0.15,"speed_limit":0.6,
                  "speed_limit_changes":[{"s":2.0,"new_limit":0.3}]}]}"#,
        )
        .unwrap();
        build_graph(&spec).unwrap()
    }

    #[test]
    fn limit_window_rules() {
        let g = limit_map();
        let v = applicable_speed_limit(&g, "s1:f0", 1.2, 1.0).unwrap();
        assert_eq!(v.current, 0.6);
        let up = v.upcoming.unwrap();
        assert_eq!(up.limit, 0.3);
        assert!((up.distance - 0.8).abs() < 1e-12);
        let v = applicable_speed_limit(&g, "s1:f0", 1.2, 0.5).unwrap();
        assert!(v.upcoming.is_none());
        let v = applicable_speed_limit(&g, "s1:f0", 3.0, 1.0).unwrap();
        assert_eq!(v.current, 0.3);
        let v = applicable_speed_limit(&g, "s1:b0", 1.0, 10.0).unwrap();
        assert_eq!(v.current, 0.6);
        assert!(v.upcoming.is_none());
        assert!(applicable_speed_limit(&g, "nope", 0.0, 1.0).is_err());
    }

    #[test]
    fn limit_change_found_on_successor() {
        let spec = parse_map(
            r#"{"name":"chain","scale_denominator":10,
                "nodes":[{"id":"A","x":0.0,"y":0.0},{"id":"B","x":2.0,"y":0.0},{"id":"C","x":4.0,"y":0.0}],
                "segments":[
                 {"id":"s1","from_node":"A","to_node":"B","geometry":{"kind":"straight"},
                  "lanes_per_direction":1,"lane_width":0.15,"speed_limit":0.6},
                 {"id":"s2","from_node":"B","to_node":"C","geometry":{"kind":"straight"},
                  "lanes_per_direction":1,"lane_width":0.15,"speed_limit":0.4}]}"#,
        )
        .unwrap();
        let g = build_graph(&spec).unwrap();
        let v = applicable_speed_limit(&g, "s1:f0", 1.5, 1.0).unwrap();
        let up = v.upcoming.unwrap();
        assert_eq!(up.limit, 0.4);
        assert!((up.distance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn signals_on_grid() {
        let g = build_graph(&generate_grid(3, 3, 1.0, 0.15, 0.5).unwrap()).unwrap();
        // eastbound approach into the centre node
        assert!(signal_for_lane(&g, "h01_00:f0").unwrap().is_some());
        // boundary lane leaving the centre towards a corner
        assert!(signal_for_lane(&g, "h00_00:f0").unwrap().is_none());
        assert!(signal_for_lane(&g, "bogus").is_err());
    }

    #[test]
    fn governed_lane_count_on_testbed_grid() {
        // 4x3 grid: interior nodes (1,1) and (2,1), four single-lane approaches each
        let g = build_graph(&generate_grid(4, 3, 1.2, 0.15, 0.6).unwrap()).unwrap();
        let governed = g
            .lanes
            .iter()
            .filter(|l| signal_for_lane(&g, &l.id).unwrap().is_some())
            .count();
        assert_eq!(governed, 4 * 2);
    }
}
