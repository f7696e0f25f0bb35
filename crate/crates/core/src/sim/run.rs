use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::scenario::{ControllerSpec, ScenarioSpec};
use super::world::{perceive, step_world, EventRecord, Perception, WorldState};
use super::SimError;
use crate::agent::{agent_policy, AgentCtlState, PersonalityProfile, WorldSnapshot};
use crate::canon::{self, hash64};
use crate::map::{MapGraph, MapSpec};
use crate::plant::ActuatorCommand;
use crate::teleop::{Channel, ControlInbox, LinkDirection};
use crate::telemetry::{
    self, session_id_for, SessionHeader, SessionLog, TelemetryRecord, VehicleEntry, HEADLESS_CREATED_AT,
};

/// How a vehicle's command is produced each tick.
#[derive(Debug, Clone)]
pub enum Controller {
    Agent {
        profile: PersonalityProfile,
        route: Option<Vec<String>>,
        ctl: AgentCtlState,
    },
    /// Commands submitted from outside, delivered through the uplink model.
    External { inbox: ControlInbox, uplink: Channel },
    /// Recorded commands re-sent through the uplink model at their ticks.
    Replay {
        commands: Vec<ActuatorCommand>,
        inbox: ControlInbox,
        uplink: Channel,
    },
    /// Recorded commands applied verbatim, bypassing the link. Used to
    /// verify a log against its own commands.
    Direct { commands: Vec<ActuatorCommand> },
}

/// Loads earlier sessions referenced by replay controllers.
pub trait ReplaySource {
    fn load(&self, prefix: &str) -> Result<SessionLog, SimError>;
}

/// Sessions on disk; relative prefixes resolve against `base_dir`.
#[derive(Debug, Clone, Default)]
pub struct FileReplaySource {
    pub base_dir: Option<PathBuf>,
}

impl ReplaySource for FileReplaySource {
    fn load(&self, prefix: &str) -> Result<SessionLog, SimError> {
        let mut p = PathBuf::from(prefix);
        if p.is_relative() {
            if let Some(base) = &self.base_dir {
                p = base.join(p);
            }
        }
        telemetry::read_log_ref(&p).map_err(|e| SimError::Scenario(format!("replay source {prefix:?}: {e}")))
    }
}

/// Sessions held in memory, keyed by prefix.
#[derive(Debug, Clone, Default)]
pub struct MemoryReplaySource(pub BTreeMap<String, SessionLog>);

impl ReplaySource for MemoryReplaySource {
    fn load(&self, prefix: &str) -> Result<SessionLog, SimError> {
        self.0
            .get(prefix)
            .cloned()
            .ok_or_else(|| SimError::Scenario(format!("unresolved replay reference {prefix:?}")))
    }
}

/// Per-tick commands of one vehicle in a log, in tick order.
pub fn replay_commands(log: &SessionLog, vehicle_id: &str) -> Result<Vec<ActuatorCommand>, SimError> {
    let cmds: Vec<ActuatorCommand> = log
        .vehicle_records(vehicle_id)
        .map(|r| ActuatorCommand::new(r.steer_cmd, r.throttle_cmd, r.brake_cmd))
        .collect();
    if cmds.is_empty() && log.tick_count() > 0 {
        return Err(SimError::Scenario(format!("log has no vehicle {vehicle_id:?}")));
    }
    Ok(cmds)
}

fn resolve_replay(log_ref: &str, source: &dyn ReplaySource) -> Result<Vec<ActuatorCommand>, SimError> {
    let (prefix, vid) = match log_ref.rsplit_once('#') {
        Some((p, v)) => (p, Some(v)),
        None => (log_ref, None),
    };
    let log = source.load(prefix)?;
    let vid = vid.map(str::to_string).unwrap_or_else(|| log.header.subject.clone());
    replay_commands(&log, &vid)
}

/// Seed of a vehicle's uplink channel.
pub fn channel_seed(scenario_seed: u64, channel_seed: u64, vehicle_id: &str, direction: LinkDirection) -> u64 {
    hash64(&format!("{scenario_seed}/{channel_seed}/{direction:?}/{vehicle_id}"))
}

/// A running session: world, controllers, and the recorded log so far.
pub struct Simulation {
    scenario: ScenarioSpec,
    map_spec: MapSpec,
    graph: MapGraph,
    world: WorldState,
    controllers: BTreeMap<String, Controller>,
    log: SessionLog,
    total_ticks: u64,
    finished: bool,
}

impl Simulation {
    pub fn new(scenario: &ScenarioSpec, base_dir: Option<&Path>, source: &dyn ReplaySource) -> Result<Self, SimError> {
        Self::with_overrides(scenario, base_dir, source, BTreeMap::new())
    }

    /// Like `new`, with some vehicles' controllers replaced by verbatim
    /// command lists.
    pub fn with_overrides(
        scenario: &ScenarioSpec,
        base_dir: Option<&Path>,
        source: &dyn ReplaySource,
        mut direct: BTreeMap<String, Vec<ActuatorCommand>>,
    ) -> Result<Self, SimError> {
        let scenario = scenario.normalized()?;
        let (map_spec, graph) = scenario.resolve_map(base_dir)?;
        scenario.validate(&graph)?;
        let world = WorldState::new(&scenario, &graph)?;
        let channel = scenario.backend.channel;

        let mut controllers = BTreeMap::new();
        for v in &scenario.vehicles {
            let uplink = || {
                Channel::new(
                    channel,
                    LinkDirection::Uplink,
                    channel_seed(scenario.seed, channel.seed, &v.vehicle_id, LinkDirection::Uplink),
                )
            };
            let ctl = if let Some(commands) = direct.remove(&v.vehicle_id) {
                Controller::Direct { commands }
            } else {
                match &v.controller {
                    ControllerSpec::Agent { profile, route } => Controller::Agent {
                        profile: profile.resolve()?,
                        route: route.clone(),
                        ctl: AgentCtlState {
                            v_ref: v.start.v0,
                            ..AgentCtlState::default()
                        },
                    },
                    ControllerSpec::External => Controller::External {
                        inbox: ControlInbox::new(0.0),
                        uplink: uplink(),
                    },
                    ControllerSpec::Replay { log_ref } => Controller::Replay {
                        commands: resolve_replay(log_ref, source)?,
                        inbox: ControlInbox::new(0.0),
                        uplink: uplink(),
                    },
                }
            };
            controllers.insert(v.vehicle_id.clone(), ctl);
        }
        if let Some(id) = direct.keys().next() {
            return Err(SimError::UnknownVehicle(id.clone()));
        }

        let scenario_digest = scenario.digest();
        let header = SessionHeader {
            session_id: session_id_for(&scenario_digest, scenario.seed),
            scenario_name: scenario.name.clone(),
            scenario_digest,
            map_digest: map_spec.digest(),
            seed: scenario.seed,
            backend: scenario.backend.clone(),
            driver_label: scenario.driver_label.clone(),
            order_index: scenario.order_index,
            physics_dt: scenario.physics_dt,
            created_at: HEADLESS_CREATED_AT.into(),
            subject: scenario.subject_id().unwrap_or_default(),
            vehicles: scenario
                .vehicles
                .iter()
                .map(|v| VehicleEntry {
                    vehicle_id: v.vehicle_id.clone(),
                    params: v.params.clone(),
                })
                .collect(),
        };
        let total_ticks = scenario.ticks();
        Ok(Self {
            map_spec,
            graph,
            world,
            controllers,
            log: SessionLog {
                header,
                records: Vec::new(),
                events: Vec::new(),
            },
            total_ticks,
            finished: total_ticks == 0,
            scenario,
        })
    }

    pub fn scenario(&self) -> &ScenarioSpec {
        &self.scenario
    }

    pub fn map_spec(&self) -> &MapSpec {
        &self.map_spec
    }

    pub fn graph(&self) -> &MapGraph {
        &self.graph
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn header(&self) -> &SessionHeader {
        &self.log.header
    }

    pub fn header_mut(&mut self) -> &mut SessionHeader {
        &mut self.log.header
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn total_ticks(&self) -> u64 {
        self.total_ticks
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// End the session; no further ticks are recorded, and events from a
    /// step past the last recorded tick are dropped.
    pub fn finish(&mut self) {
        self.finished = true;
        let ticks = self.log.tick_count();
        self.log.events.retain(|e| e.tick < ticks);
    }

    /// Hand an externally produced control to a vehicle's uplink at the
    /// current sim time. Returns false when the link dropped it.
    pub fn submit_control(&mut self, vehicle_id: &str, seq: u64, cmd: ActuatorCommand) -> Result<bool, SimError> {
        let now = self.world.sim_t();
        match self.controllers.get_mut(vehicle_id) {
            Some(Controller::External { inbox, uplink }) => match uplink.send(now) {
                Some(at) => {
                    inbox.push(at, seq, cmd);
                    Ok(true)
                }
                None => Ok(false),
            },
            Some(_) => Err(SimError::Scenario(format!("vehicle {vehicle_id:?} is not externally controlled"))),
            None => Err(SimError::UnknownVehicle(vehicle_id.into())),
        }
    }

    /// Replace the staleness timeout of every externally driven vehicle.
    /// Only meaningful before the first tick.
    pub fn set_failsafe_timeout(&mut self, timeout: f64) {
        let t = self.world.sim_t();
        for ctl in self.controllers.values_mut() {
            if let Controller::External { inbox, .. } = ctl {
                *inbox = ControlInbox::with_timeout(t, timeout);
            }
        }
    }

    /// Whether an externally driven vehicle is currently on its failsafe.
    pub fn failsafe_active(&self, vehicle_id: &str) -> bool {
        match self.controllers.get(vehicle_id) {
            Some(Controller::External { inbox, .. }) => inbox.failsafe_active(self.world.sim_t()),
            _ => false,
        }
    }

    /// Perception of one vehicle in the current world (route-aware for agents).
    pub fn perception(&self, vehicle_id: &str) -> Result<Option<Perception>, SimError> {
        let route = match self.controllers.get(vehicle_id) {
            Some(Controller::Agent { route, .. }) => route.as_deref(),
            _ => None,
        };
        perceive(&self.world, &self.graph, vehicle_id, route)
    }

    /// Record the current tick and advance the world by one step. The step
    /// after the final recorded tick is skipped, so a session of N ticks has
    /// exactly N rows per vehicle.
    pub fn tick(&mut self) -> Result<Vec<EventRecord>, SimError> {
        if self.finished {
            return Ok(Vec::new());
        }
        let k = self.world.tick;
        let t = self.world.sim_t();
        let mut commands = BTreeMap::new();
        let mut perceptions = BTreeMap::new();
        for (id, ctl) in self.controllers.iter_mut() {
            let route = match ctl {
                Controller::Agent { route, .. } => route.as_deref(),
                _ => None,
            };
            let p = perceive(&self.world, &self.graph, id, route)?;
            let v = &self.world.vehicles[id];
            let cmd = match ctl {
                Controller::Agent { profile, ctl, .. } => match &p {
                    Some(p) => {
                        let a = v.assignment.as_ref().expect("on-road vehicle has a lane");
                        let snap = WorldSnapshot {
                            t,
                            graph: &self.graph,
                            ego: v.state,
                            v_est: v.fused.v_hat,
                            lane_id: a.lane_id.clone(),
                            s: a.s,
                            path: p.path.clone(),
                            lead: p.lead,
                            light_ahead: p.light_ahead.clone(),
                            limits: p.limits,
                            signs_ahead: p.signs_ahead.clone(),
                        };
                        let out = agent_policy(&snap, profile, &v.params, ctl)?;
                        *ctl = out.state;
                        out.cmd
                    }
                    None => ActuatorCommand::new(0.0, 0.0, 1.0),
                },
                Controller::External { inbox, .. } => inbox.poll(t),
                Controller::Replay {
                    commands,
                    inbox,
                    uplink,
                } => {
                    if let Some(cmd) = commands.get(k as usize) {
                        if let Some(at) = uplink.send(t) {
                            inbox.push(at, k, *cmd);
                        }
                    }
                    inbox.poll(t)
                }
                Controller::Direct { commands } => commands.get(k as usize).copied().unwrap_or(v.last_cmd),
            };
            commands.insert(id.clone(), cmd.quantized());
            perceptions.insert(id.clone(), p);
        }

        for (id, v) in &self.world.vehicles {
            let cmd = commands[id];
            let p = &perceptions[id];
            let (lane_id, s, lat) = v
                .assignment
                .as_ref()
                .map_or((String::new(), 0.0, 0.0), |a| (a.lane_id.clone(), a.s, a.lateral_offset));
            self.log.records.push(
                TelemetryRecord {
                    tick: k,
                    sim_t: t,
                    vehicle_id: id.clone(),
                    x: v.state.x,
                    y: v.state.y,
                    theta: v.state.theta,
                    v: v.state.v,
                    a: v.state.a,
                    steer_cmd: cmd.steer,
                    throttle_cmd: cmd.throttle,
                    brake_cmd: cmd.brake,
                    encoder_v: v.encoder_v,
                    fused_v: v.fused.v_hat,
                    fused_a: v.fused.a_hat,
                    lane_id,
                    s,
                    lateral_offset: lat,
                    light_ahead: p.as_ref().and_then(|p| p.light_ahead.as_ref()).map(|l| l.state.phase),
                    current_limit: p.as_ref().map_or(0.0, |p| p.limits.current),
                }
                .quantized(),
            );
        }

        if k + 1 >= self.total_ticks {
            // keep the held commands visible to observers of the final state
            for (id, cmd) in &commands {
                if let Some(v) = self.world.vehicles.get_mut(id) {
                    v.last_cmd = *cmd;
                }
            }
            self.finished = true;
            return Ok(Vec::new());
        }
        let events = step_world(&mut self.world, &commands, &self.graph, self.scenario.physics_dt)?;
        self.log.events.extend(events.iter().cloned());
        Ok(events)
    }

    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        while !self.finished {
            self.tick()?;
        }
        Ok(())
    }

    pub fn into_log(self) -> SessionLog {
        self.log
    }
}

/// Run a scenario to completion with every controller evaluated in-process.
pub fn run_headless(scenario: &ScenarioSpec, base_dir: Option<&Path>, source: &dyn ReplaySource) -> Result<SessionLog, SimError> {
    let mut sim = Simulation::new(scenario, base_dir, source)?;
    sim.run_to_end()?;
    Ok(sim.into_log())
}

/// Write the log triplet plus the normalized scenario it came from.
pub fn save_session(dir: &Path, log: &SessionLog, scenario: &ScenarioSpec) -> Result<PathBuf, telemetry::TelemetryError> {
    let scenario = scenario
        .normalized()
        .map_err(|e| telemetry::TelemetryError::Schema(e.to_string()))?;
    if scenario.digest() != log.header.scenario_digest {
        return Err(telemetry::TelemetryError::DigestMismatch {
            expected: log.header.scenario_digest.clone(),
            actual: scenario.digest(),
        });
    }
    let id = telemetry::write_log(dir, log)?;
    std::fs::write(
        telemetry::session_file(dir, &id, telemetry::SCENARIO_EXT),
        canon::to_pretty(&scenario).expect("scenario serializes"),
    )?;
    Ok(dir.join(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{NoiseConfig, VehicleParams};
    use crate::sim::scenario::{BackendDescriptor, GridArgs, MapSource, ProfileSpec, StartSpec, VehicleSpec};

    fn grid() -> MapSource {
        MapSource::Grid(GridArgs {
            rows: 3,
            cols: 3,
            block_length: 1.2,
            lane_width: 0.15,
            speed_limit: 0.6,
        })
    }

    fn agent(id: &str, lane: &str, s: f64, preset: &str) -> VehicleSpec {
        VehicleSpec {
            vehicle_id: id.into(),
            params: VehicleParams::default(),
            noise: NoiseConfig::default(),
            start: StartSpec {
                lane_id: lane.into(),
                s,
                v0: 0.0,
            },
            controller: ControllerSpec::Agent {
                profile: ProfileSpec::Preset(preset.into()),
                route: None,
            },
        }
    }

    fn scenario(duration: f64) -> ScenarioSpec {
        ScenarioSpec {
            name: "run".into(),
            map: grid(),
            duration,
            physics_dt: 0.01,
            seed: 11,
            vehicles: vec![agent("b", "h00_00:f0", 0.1, "DEFENSIVE"), agent("a", "v01_00:f0", 0.2, "AGGRESSIVE")],
            light_overrides: vec![],
            backend: BackendDescriptor::sim(),
            subject: None,
            driver_label: String::new(),
            order_index: 0,
        }
    }

    #[test]
    fn row_count_matches_duration() {
        let log = run_headless(&scenario(2.0), None, &MemoryReplaySource::default()).unwrap();
        assert_eq!(log.records.len(), 2 * 200);
        assert_eq!(log.tick_count(), 200);
        assert!(log.events.iter().all(|e| e.tick < 200));
        assert_eq!(log.header.subject, "a");
    }

    #[test]
    fn zero_duration_is_empty() {
        let log = run_headless(&scenario(0.0), None, &MemoryReplaySource::default()).unwrap();
        assert!(log.records.is_empty());
    }

    #[test]
    fn declaration_order_does_not_matter() {
        let s = scenario(1.5);
        let mut r = s.clone();
        r.vehicles.reverse();
        let src = MemoryReplaySource::default();
        assert_eq!(run_headless(&s, None, &src).unwrap(), run_headless(&r, None, &src).unwrap());
    }

    #[test]
    fn agents_make_progress() {
        let log = run_headless(&scenario(5.0), None, &MemoryReplaySource::default()).unwrap();
        let travelled: f64 = log.vehicle_records("a").map(|r| r.v * 0.01).sum();
        assert!(travelled > 1.5, "{travelled}");
        assert!(log.vehicle_records("a").all(|r| r.on_road()));
    }

    #[test]
    fn replay_through_zero_link_reproduces_states() {
        let s = scenario(3.0);
        let src = MemoryReplaySource::default();
        let original = run_headless(&s, None, &src).unwrap();
        let mut r = s.clone();
        for v in &mut r.vehicles {
            v.controller = ControllerSpec::Replay {
                log_ref: format!("orig#{}", v.vehicle_id),
            };
        }
        let mut logs = BTreeMap::new();
        logs.insert("orig".to_string(), original.clone());
        let replayed = run_headless(&r, None, &MemoryReplaySource(logs)).unwrap();
        assert_eq!(replayed.records, original.records);
        assert_eq!(replayed.events, original.events);
    }

    #[test]
    fn external_vehicle_without_client_fails_safe() {
        let mut s = scenario(2.0);
        s.vehicles[0].controller = ControllerSpec::External;
        s.vehicles[0].start.v0 = 0.5;
        let log = run_headless(&s, None, &MemoryReplaySource::default()).unwrap();
        let rows: Vec<_> = log.vehicle_records("b").collect();
        assert_eq!(rows[10].brake_cmd, 0.0);
        assert_eq!(rows[60].brake_cmd, 0.3);
    }

    #[test]
    fn unresolved_replay_is_a_scenario_error() {
        let mut s = scenario(1.0);
        s.vehicles[0].controller = ControllerSpec::Replay { log_ref: "nowhere".into() };
        assert!(matches!(
            run_headless(&s, None, &MemoryReplaySource::default()),
            Err(SimError::Scenario(_))
        ));
    }
}
