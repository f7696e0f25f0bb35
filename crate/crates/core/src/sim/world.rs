use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::{BTreeMap, BTreeSet};

use super::collision::{detect_collision_pairs, Footprint};
use super::scenario::{Actuation, ScenarioSpec};
use super::SimError;
use crate::agent::{plan_path, LeadInfo, LightAhead, SignAhead};
use crate::canon::{hash64, quantize};
use crate::map::{LaneAssignment, MapError, MapGraph, SignKind};
use crate::plant::{
    command_to_pwm, direct_plant_inputs, pwm_to_plant_inputs, step_dynamics, ActuatorCommand, FusedEstimate,
    FusionFilter, NoiseConfig, SensorFrame, SensorSuite, VehicleParams, VehicleState,
};
use crate::traffic::{applicable_speed_limit, LightState, SpeedLimitView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Collision,
    LaneChange,
    RedLightEntry,
    OffRoad,
    StopSignViolation,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Collision => "collision",
            EventKind::LaneChange => "lane_change",
            EventKind::RedLightEntry => "red_light_entry",
            EventKind::OffRoad => "off_road",
            EventKind::StopSignViolation => "stop_sign_violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub kind: EventKind,
    pub tick: u64,
    pub vehicle_ids: Vec<String>,
    pub details: Map<String, Value>,
}

impl EventRecord {
    fn new(kind: EventKind, tick: u64, vehicle_ids: Vec<String>) -> Self {
        Self {
            kind,
            tick,
            vehicle_ids,
            details: Map::new(),
        }
    }

    fn real(mut self, key: &str, v: f64) -> Self {
        self.details.insert(key.into(), Value::from(quantize(v)));
        self
    }

    fn text(mut self, key: &str, v: &str) -> Self {
        self.details.insert(key.into(), Value::from(v));
        self
    }

    pub fn involves(&self, vehicle_id: &str) -> bool {
        self.vehicle_ids.iter().any(|v| v == vehicle_id)
    }
}

/// Distance ahead of the rear axle covered by planned paths.
pub const PATH_HORIZON: f64 = 4.0;
/// Lights, signs and leaders further than this are not reported.
pub const PERCEPTION_RANGE: f64 = 3.0;
const STOPPED_V: f64 = 0.01;
const SIGN_CROSS_V: f64 = 0.05;
const STOP_ZONE: f64 = 0.3;

#[derive(Debug, Clone)]
pub struct VehicleSim {
    pub id: String,
    pub params: VehicleParams,
    pub state: VehicleState,
    /// `None` while off the road.
    pub assignment: Option<LaneAssignment>,
    pub last_cmd: ActuatorCommand,
    pub latest_frame: Option<SensorFrame>,
    pub fused: FusedEstimate,
    pub encoder_v: f64,
    pub frozen: bool,
    sensors: SensorSuite,
    fusion: FusionFilter,
    window_ticks: u64,
    last_lane: Option<String>,
    last_stop: Option<(String, f64)>,
}

impl VehicleSim {
    pub fn fusion(&self) -> &FusionFilter {
        &self.fusion
    }

    fn bumper_s(&self) -> Option<(String, f64)> {
        self.assignment
            .as_ref()
            .map(|a| (a.lane_id.clone(), a.s + self.params.front_offset()))
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub tick: u64,
    pub physics_dt: f64,
    pub vehicles: BTreeMap<String, VehicleSim>,
    pub lights: BTreeMap<String, LightState>,
    actuation: Actuation,
    contacts: BTreeSet<(String, String)>,
}

/// Per-vehicle generator seed, split from the scenario seed by vehicle id.
pub fn vehicle_seed(scenario_seed: u64, vehicle_id: &str) -> u64 {
    hash64(&format!("{scenario_seed}/{vehicle_id}"))
}

impl WorldState {
    pub fn new(scenario: &ScenarioSpec, graph: &MapGraph) -> Result<Self, SimError> {
        let dt = scenario.physics_dt;
        let mut vehicles = BTreeMap::new();
        for spec in &scenario.vehicles {
            let lane = graph.lane_or_err(&spec.start.lane_id)?;
            let pose = lane.centerline.pose_at(spec.start.s);
            let state = VehicleState {
                x: pose.x,
                y: pose.y,
                theta: pose.heading,
                v: spec.start.v0,
                a: 0.0,
                delta: 0.0,
            };
            let noise = if scenario.backend.sensor_noise {
                spec.noise
            } else {
                NoiseConfig {
                    sensor_window: spec.noise.sensor_window,
                    camera_period: spec.noise.camera_period,
                    camera_latency: spec.noise.camera_latency,
                    ..NoiseConfig::off()
                }
            };
            let mut sensors = SensorSuite::new(noise, vehicle_seed(scenario.seed, &spec.vehicle_id));
            sensors.observe_state(0.0, &state);
            let v0 = spec.start.v0;
            vehicles.insert(
                spec.vehicle_id.clone(),
                VehicleSim {
                    id: spec.vehicle_id.clone(),
                    params: spec.params.clone(),
                    state,
                    assignment: Some(LaneAssignment {
                        lane_id: lane.id.clone(),
                        s: spec.start.s,
                        lateral_offset: 0.0,
                    }),
                    last_cmd: ActuatorCommand::default(),
                    latest_frame: None,
                    fused: FusedEstimate {
                        v_hat: v0,
                        a_hat: 0.0,
                        v_enc: v0,
                    },
                    encoder_v: v0,
                    frozen: false,
                    sensors,
                    fusion: FusionFilter::new(),
                    window_ticks: (noise.sensor_window / dt).round().max(1.0) as u64,
                    last_lane: Some(lane.id.clone()),
                    last_stop: None,
                },
            );
        }
        let mut world = Self {
            tick: 0,
            physics_dt: dt,
            vehicles,
            lights: BTreeMap::new(),
            actuation: scenario.backend.actuation,
            contacts: BTreeSet::new(),
        };
        let pairs = detect_collision_pairs(&world.footprints());
        if let Some((a, b)) = pairs.first() {
            return Err(SimError::Scenario(format!("vehicles {a} and {b} start overlapping")));
        }
        world.update_lights(graph);
        Ok(world)
    }

    pub fn sim_t(&self) -> f64 {
        self.tick as f64 * self.physics_dt
    }

    pub fn footprints(&self) -> Vec<Footprint> {
        self.vehicles
            .values()
            .map(|v| Footprint::of_vehicle(&v.id, &v.state, &v.params))
            .collect()
    }

    fn update_lights(&mut self, graph: &MapGraph) {
        let t = self.sim_t();
        self.lights = graph
            .lights
            .iter()
            .map(|l| (l.light_id.clone(), l.schedule.state_at(t)))
            .collect();
    }
}

/// Advance the world one physics step. Vehicles without an entry in
/// `commands` hold their last command.
pub fn step_world(
    world: &mut WorldState,
    commands: &BTreeMap<String, ActuatorCommand>,
    graph: &MapGraph,
    dt: f64,
) -> Result<Vec<EventRecord>, SimError> {
    if let Some(id) = commands.keys().find(|id| !world.vehicles.contains_key(*id)) {
        return Err(SimError::UnknownVehicle(id.clone()));
    }
    if (dt - world.physics_dt).abs() > 1e-12 {
        return Err(SimError::Scenario(format!(
            "step dt {dt} differs from physics_dt {}",
            world.physics_dt
        )));
    }
    let actuation = world.actuation;
    let next_tick = world.tick + 1;
    let t_next = next_tick as f64 * dt;

    let before: BTreeMap<String, (Option<(String, f64)>, f64)> = world
        .vehicles
        .iter()
        .map(|(id, v)| (id.clone(), (v.bumper_s(), v.state.v)))
        .collect();

    for v in world.vehicles.values_mut() {
        let cmd = commands.get(&v.id).copied().unwrap_or(v.last_cmd).quantized();
        v.last_cmd = cmd;
        if v.frozen {
            v.state.v = 0.0;
            v.state.a = 0.0;
        } else {
            let inputs = match actuation {
                Actuation::Direct => direct_plant_inputs(&cmd, &v.params),
                Actuation::Pwm => pwm_to_plant_inputs(&command_to_pwm(&cmd, &v.params), &v.params),
            };
            let prev_v = v.state.v;
            v.state = step_dynamics(&v.state, &inputs, &v.params, dt);
            v.sensors.record_motion(0.5 * (prev_v + v.state.v) * dt, &v.params);
        }
        v.sensors.observe_state(t_next, &v.state);
        if next_tick.is_multiple_of(v.window_ticks) {
            let frame = v.sensors.sample(&v.state, &v.params, t_next);
            v.encoder_v = frame.encoder_ticks as f64 / frame.window * v.params.metres_per_tick();
            v.fused = v.fusion.update(&frame, &v.params);
            v.latest_frame = Some(frame);
        }
    }
    world.tick = next_tick;
    world.update_lights(graph);

    let mut events = Vec::new();
    for v in world.vehicles.values_mut() {
        let located = graph.locate_near(v.last_lane.as_deref(), v.state.x, v.state.y, v.state.theta);
        let prev_assignment = v.assignment.take();
        match located {
            Ok(a) => {
                if let Some(prev) = &prev_assignment {
                    if prev.lane_id != a.lane_id && graph.are_codirectional_neighbors(&prev.lane_id, &a.lane_id) {
                        events.push(
                            EventRecord::new(EventKind::LaneChange, next_tick, vec![v.id.clone()])
                                .text("from_lane", &prev.lane_id)
                                .text("to_lane", &a.lane_id),
                        );
                    }
                }
                v.last_lane = Some(a.lane_id.clone());
                v.assignment = Some(a);
            }
            Err(MapError::OffMap { distance }) => {
                if prev_assignment.is_some() {
                    events.push(
                        EventRecord::new(EventKind::OffRoad, next_tick, vec![v.id.clone()]).real("distance", distance),
                    );
                }
            }
            Err(e) => return Err(e.into()),
        }

        let (prev_bumper, prev_v) = before[&v.id].clone();
        let (Some((prev_lane, prev_b)), Some((_, _))) = (prev_bumper, v.bumper_s()) else {
            continue;
        };
        let a = v.assignment.as_ref().expect("assignment present");
        let fo = v.params.front_offset();
        // bumper position expressed in the previous lane's arc length
        let new_b = if a.lane_id == prev_lane {
            Some(a.s + fo)
        } else if graph
            .lane(&prev_lane)
            .is_some_and(|l| l.successors.contains(&a.lane_id))
        {
            Some(graph.lane(&prev_lane).map_or(0.0, |l| l.length) + a.s + fo)
        } else {
            None
        };

        if v.state.v < STOPPED_V {
            v.last_stop = Some((a.lane_id.clone(), a.s + fo));
        }

        let Some(new_b) = new_b else { continue };
        for light in graph.lights.iter().filter(|l| l.lane_id == prev_lane) {
            if prev_b < light.stop_line_s && new_b >= light.stop_line_s {
                let phase = world.lights.get(&light.light_id).map(|s| s.phase);
                if phase == Some(crate::traffic::Phase::Red) {
                    events.push(
                        EventRecord::new(EventKind::RedLightEntry, next_tick, vec![v.id.clone()])
                            .text("light_id", &light.light_id)
                            .text("lane_id", &prev_lane)
                            .real("speed", v.state.v),
                    );
                }
            }
        }
        for sign in graph.signs.iter().filter(|s| s.lane_id == prev_lane && s.kind == SignKind::Stop) {
            if prev_b < sign.s && new_b >= sign.s {
                let stopped_before = v.last_stop.as_ref().is_some_and(|(lane, b)| {
                    *lane == prev_lane && *b <= sign.s + 1e-9 && *b >= sign.s - STOP_ZONE
                });
                let crossing_v = prev_v.max(v.state.v);
                if crossing_v > SIGN_CROSS_V && !stopped_before {
                    events.push(
                        EventRecord::new(EventKind::StopSignViolation, next_tick, vec![v.id.clone()])
                            .text("lane_id", &prev_lane)
                            .real("s", sign.s)
                            .real("speed", crossing_v),
                    );
                }
            }
        }
    }

    let pairs: BTreeSet<(String, String)> = detect_collision_pairs(&world.footprints()).into_iter().collect();
    for (a, b) in pairs.difference(&world.contacts) {
        let (va, vb) = (&world.vehicles[a].state, &world.vehicles[b].state);
        let rel = (va.v * va.theta.cos() - vb.v * vb.theta.cos()).hypot(va.v * va.theta.sin() - vb.v * vb.theta.sin());
        events.push(
            EventRecord::new(EventKind::Collision, next_tick, vec![a.clone(), b.clone()]).real("impact_speed", rel),
        );
    }
    for (a, b) in &pairs {
        for id in [a, b] {
            let v = world.vehicles.get_mut(id).expect("vehicle exists");
            v.frozen = true;
            v.state.v = 0.0;
            v.state.a = 0.0;
        }
    }
    world.contacts = pairs;
    Ok(events)
}

/// What one vehicle perceives of the world ahead along its planned path.
#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    pub path: Vec<String>,
    pub lead: Option<LeadInfo>,
    pub light_ahead: Option<LightAhead>,
    pub limits: SpeedLimitView,
    pub signs_ahead: Vec<SignAhead>,
}

pub fn perceive(
    world: &WorldState,
    graph: &MapGraph,
    vehicle_id: &str,
    route: Option<&[String]>,
) -> Result<Option<Perception>, SimError> {
    let ego = world
        .vehicles
        .get(vehicle_id)
        .ok_or_else(|| SimError::UnknownVehicle(vehicle_id.into()))?;
    let Some(a) = &ego.assignment else {
        return Ok(None);
    };
    let path = plan_path(graph, &a.lane_id, a.s, PATH_HORIZON, route);
    // arc length at the start of each path lane, relative to the ego axle
    let mut starts = Vec::with_capacity(path.len());
    let mut acc = -a.s;
    for id in &path {
        starts.push(acc);
        acc += graph.lane_or_err(id)?.length;
    }
    let fo = ego.params.front_offset();

    let mut lead: Option<LeadInfo> = None;
    for other in world.vehicles.values().filter(|o| o.id != ego.id) {
        let Some(oa) = &other.assignment else { continue };
        let Some(i) = path.iter().position(|p| *p == oa.lane_id) else {
            continue;
        };
        let dist = starts[i] + oa.s;
        if dist <= 0.0 {
            continue;
        }
        let gap = dist - fo - other.params.rear_offset();
        if gap > PERCEPTION_RANGE {
            continue;
        }
        if lead.is_none_or(|l| gap < l.gap) {
            lead = Some(LeadInfo {
                gap,
                v: other.state.v,
            });
        }
    }

    let mut light_ahead = None;
    'lights: for (i, id) in path.iter().enumerate() {
        for l in graph.lights.iter().filter(|l| l.lane_id == *id) {
            let d = starts[i] + l.stop_line_s - fo;
            if d < 0.0 {
                continue;
            }
            if d > PERCEPTION_RANGE {
                break 'lights;
            }
            if let Some(state) = world.lights.get(&l.light_id) {
                light_ahead = Some(LightAhead {
                    light_id: l.light_id.clone(),
                    state: *state,
                    distance_to_stop_line: d,
                });
                break 'lights;
            }
        }
    }

    let mut signs_ahead = Vec::new();
    for (i, id) in path.iter().enumerate() {
        for s in graph.signs.iter().filter(|s| s.lane_id == *id) {
            let d = starts[i] + s.s - fo;
            if (0.0..=PERCEPTION_RANGE).contains(&d) {
                signs_ahead.push(SignAhead {
                    key: format!("{}@{:.3}", s.lane_id, s.s),
                    kind: s.kind,
                    distance: d,
                });
            }
        }
    }

    let limits = applicable_speed_limit(graph, &a.lane_id, a.s, PERCEPTION_RANGE)?;
    Ok(Some(Perception {
        path,
        lead,
        light_ahead,
        limits,
        signs_ahead,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{build_graph, generate_grid, parse_map};
    use crate::sim::scenario::{
        BackendDescriptor, ControllerSpec, GridArgs, MapSource, ScenarioSpec, StartSpec, VehicleSpec,
    };
    use crate::traffic::{LightPhaseSchedule, Phase};

    fn straight_map(length: f64) -> crate::map::MapSpec {
        parse_map(&format!(
            r#"{{"name":"straight","scale_denominator":10,
                "nodes":[{{"id":"A","x":0.0,"y":0.0}},{{"id":"B","x":{length},"y":0.0}}],
                "segments":[{{"id":"s1","from_node":"A","to_node":"B","geometry":{{"kind":"straight"}},
                  "lanes_per_direction":2,"lane_width":0.15,"speed_limit":0.6}}]}}"#
        ))
        .unwrap()
    }

    fn scenario(map: MapSource, vehicles: Vec<(&str, &str, f64, f64)>) -> ScenarioSpec {
        ScenarioSpec {
            name: "w".into(),
            map,
            duration: 1.0,
            physics_dt: 0.01,
            seed: 3,
            vehicles: vehicles
                .into_iter()
                .map(|(id, lane, s, v0)| VehicleSpec {
                    vehicle_id: id.into(),
                    params: VehicleParams::default(),
                    noise: NoiseConfig::off(),
                    start: StartSpec {
                        lane_id: lane.into(),
                        s,
                        v0,
                    },
                    controller: ControllerSpec::External,
                })
                .collect(),
            light_overrides: vec![],
            backend: BackendDescriptor::sim(),
            subject: None,
            driver_label: String::new(),
            order_index: 0,
        }
    }

    fn run(world: &mut WorldState, graph: &MapGraph, cmds: &BTreeMap<String, ActuatorCommand>, n: usize) -> Vec<EventRecord> {
        let mut all = Vec::new();
        for _ in 0..n {
            all.extend(step_world(world, cmds, graph, 0.01).unwrap());
        }
        all
    }

    #[test]
    fn far_apart_coasting_has_no_events() {
        let spec = scenario(
            MapSource::Embedded(straight_map(10.0)),
            vec![("a", "s1:f0", 0.5, 0.5), ("b", "s1:f0", 5.0, 0.5)],
        );
        let g = build_graph(&straight_map(10.0)).unwrap();
        let mut w = WorldState::new(&spec, &g).unwrap();
        let events = run(&mut w, &g, &BTreeMap::new(), 100);
        assert!(events.is_empty(), "{events:?}");
        // coast-down: v(t) = v0 exp(-drag t)
        let v = w.vehicles["a"].state.v;
        assert!((v - 0.5 * (-0.5f64).exp()).abs() < 1e-6);
        assert!(w.vehicles["a"].state.x > 0.5);
    }

    #[test]
    fn rear_end_collision_fires_once_and_freezes() {
        let spec = scenario(
            MapSource::Embedded(straight_map(10.0)),
            vec![("a", "s1:f0", 0.5, 0.0), ("b", "s1:f0", 1.2, 0.0)],
        );
        let g = build_graph(&straight_map(10.0)).unwrap();
        let mut w = WorldState::new(&spec, &g).unwrap();
        let mut cmds = BTreeMap::new();
        cmds.insert("a".to_string(), ActuatorCommand::new(0.0, 1.0, 0.0));
        let events = run(&mut w, &g, &cmds, 300);
        let collisions: Vec<_> = events.iter().filter(|e| e.kind == EventKind::Collision).collect();
        assert_eq!(collisions.len(), 1);
        assert_eq!(collisions[0].vehicle_ids, vec!["a", "b"]);
        assert!(w.vehicles["a"].frozen && w.vehicles["b"].frozen);
        assert_eq!(w.vehicles["a"].state.v, 0.0);
    }

    #[test]
    fn lane_change_between_neighbours() {
        let spec = scenario(MapSource::Embedded(straight_map(10.0)), vec![("a", "s1:f0", 0.5, 0.5)]);
        let g = build_graph(&straight_map(10.0)).unwrap();
        let mut w = WorldState::new(&spec, &g).unwrap();
        // steer toward the outer (right) lane, then straighten
        let mut cmds = BTreeMap::new();
        cmds.insert("a".to_string(), ActuatorCommand::new(-0.6, 0.125, 0.0));
        let mut events = run(&mut w, &g, &cmds, 60);
        cmds.insert("a".to_string(), ActuatorCommand::new(0.6, 0.125, 0.0));
        events.extend(run(&mut w, &g, &cmds, 60));
        let changes: Vec<_> = events.iter().filter(|e| e.kind == EventKind::LaneChange).collect();
        assert_eq!(changes.len(), 1, "{events:?}");
        assert_eq!(changes[0].details["to_lane"], "s1:f1");
    }

    #[test]
    fn red_light_entry_counted_once() {
        let grid = GridArgs {
            rows: 3,
            cols: 3,
            block_length: 1.2,
            lane_width: 0.15,
            speed_limit: 0.6,
        };
        let mut spec = scenario(MapSource::Grid(grid.clone()), vec![("a", "h01_00:f0", 0.3, 0.5)]);
        let (_, g0) = spec.resolve_map(None).unwrap();
        let light = g0.lights.iter().find(|l| l.lane_id == "h01_00:f0").unwrap().light_id.clone();
        spec.light_overrides.push(crate::sim::scenario::LightOverride {
            light_id: light,
            schedule: LightPhaseSchedule {
                green_s: 0.0,
                amber_s: 0.0,
                red_s: 20.0,
                offset_s: 0.0,
            },
        });
        let (_, g) = spec.resolve_map(None).unwrap();
        let mut w = WorldState::new(&spec, &g).unwrap();
        let mut cmds = BTreeMap::new();
        cmds.insert("a".to_string(), ActuatorCommand::new(0.0, 0.125, 0.0));
        let events = run(&mut w, &g, &cmds, 250);
        let reds: Vec<_> = events.iter().filter(|e| e.kind == EventKind::RedLightEntry).collect();
        assert_eq!(reds.len(), 1, "{events:?}");
    }

    #[test]
    fn off_road_once_per_episode() {
        let spec = scenario(MapSource::Embedded(straight_map(10.0)), vec![("a", "s1:f0", 0.5, 0.5)]);
        let g = build_graph(&straight_map(10.0)).unwrap();
        let mut w = WorldState::new(&spec, &g).unwrap();
        let mut cmds = BTreeMap::new();
        cmds.insert("a".to_string(), ActuatorCommand::new(-0.6, 0.125, 0.0));
        let mut events = run(&mut w, &g, &cmds, 100);
        cmds.insert("a".to_string(), ActuatorCommand::new(0.0, 0.125, 0.0));
        events.extend(run(&mut w, &g, &cmds, 300));
        assert_eq!(events.iter().filter(|e| e.kind == EventKind::OffRoad).count(), 1);
        assert!(w.vehicles["a"].assignment.is_none());
    }

    #[test]
    fn unknown_vehicle_command_is_rejected() {
        let spec = scenario(MapSource::Embedded(straight_map(10.0)), vec![("a", "s1:f0", 0.5, 0.0)]);
        let g = build_graph(&straight_map(10.0)).unwrap();
        let mut w = WorldState::new(&spec, &g).unwrap();
        let mut cmds = BTreeMap::new();
        cmds.insert("ghost".to_string(), ActuatorCommand::default());
        assert!(matches!(
            step_world(&mut w, &cmds, &g, 0.01),
            Err(SimError::UnknownVehicle(_))
        ));
    }

    #[test]
    fn overlapping_starts_rejected() {
        let spec = scenario(
            MapSource::Embedded(straight_map(10.0)),
            vec![("a", "s1:f0", 0.5, 0.0), ("b", "s1:f0", 0.6, 0.0)],
        );
        let g = build_graph(&straight_map(10.0)).unwrap();
        assert!(WorldState::new(&spec, &g).is_err());
    }

    #[test]
    fn perception_finds_leader_and_light() {
        let g = build_graph(&generate_grid(3, 3, 1.2, 0.15, 0.6).unwrap()).unwrap();
        let spec = scenario(
            MapSource::Grid(GridArgs {
                rows: 3,
                cols: 3,
                block_length: 1.2,
                lane_width: 0.15,
                speed_limit: 0.6,
            }),
            vec![("a", "h01_00:f0", 0.1, 0.0), ("b", "h01_00:f0", 0.7, 0.0)],
        );
        let w = WorldState::new(&spec, &g).unwrap();
        let p = perceive(&w, &g, "a", None).unwrap().unwrap();
        let lead = p.lead.unwrap();
        let params = VehicleParams::default();
        assert!((lead.gap - (0.6 - params.front_offset() - params.rear_offset())).abs() < 1e-9);
        let light = p.light_ahead.unwrap();
        assert_eq!(light.state.phase, Phase::Green);
        let lane_len = g.lane("h01_00:f0").unwrap().length;
        assert!((light.distance_to_stop_line - (lane_len - 0.1 - params.front_offset())).abs() < 1e-9);
        assert!(perceive(&w, &g, "b", None).unwrap().unwrap().lead.is_none());
    }
}
