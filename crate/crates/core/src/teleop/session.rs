use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

use super::channel::{Channel, ChannelModel, LinkDirection, FAILSAFE_TIMEOUT};
use super::protocol::{
    BackendName, ClientMessage, Decoded, EgoView, Hud, LightView, OtherView, ProtocolError, ServerMessage,
    PROTOCOL_VERSION,
};
use crate::map::MapSpec;
use crate::plant::ActuatorCommand;
use crate::sim::{
    channel_seed, load_scenario, teleop_scenario, BackendDescriptor, ControllerSpec,
    MemoryReplaySource, ScenarioSpec, SimError, Simulation,
};
use crate::telemetry::{
    compute_metrics, format_utc, session_file, session_id_for, TelemetryError, TELEMETRY_EXT,
};

/// Radius around the ego within which other vehicles are reported.
pub const NEARBY_RADIUS: f64 = 3.0;
/// Consecutive failed lines after which a connection is dropped.
pub const MAX_CONSECUTIVE_ERRORS: u32 = 10;
pub const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Line-delimited TCP listener.
    pub listen: String,
    /// WebSocket listener; disabled when absent.
    pub ws_listen: Option<String>,
    /// State messages per second.
    pub state_rate: f64,
    /// Seconds without a delivered control before the failsafe engages.
    pub failsafe_timeout: f64,
    /// Link model applied to mock_physical sessions.
    pub channel: ChannelModel,
    /// Where finished sessions are written.
    pub data_dir: PathBuf,
    /// Where non-builtin scenario references are looked up.
    pub scenario_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7400".into(),
            ws_listen: Some("127.0.0.1:7401".into()),
            state_rate: 20.0,
            failsafe_timeout: FAILSAFE_TIMEOUT,
            channel: ChannelModel::mock_physical(),
            data_dir: PathBuf::from("sessions"),
            scenario_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.state_rate.is_finite() && self.state_rate > 0.0) {
            return Err(format!("state_rate must be positive, got {}", self.state_rate));
        }
        if !(self.failsafe_timeout.is_finite() && self.failsafe_timeout > 0.0) {
            return Err(format!("failsafe_timeout must be positive, got {}", self.failsafe_timeout));
        }
        self.channel.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("send hello first")]
    NoHello,
    #[error("unsupported protocol version {0}, expected {PROTOCOL_VERSION}")]
    Version(u32),
    #[error("no active session")]
    NotActive,
    #[error("a session is already active")]
    AlreadyActive,
    #[error("seq {got} does not follow {last}")]
    Seq { last: u64, got: u64 },
    #[error("bad scenario reference: {0}")]
    ScenarioRef(String),
    #[error("vehicle {0:?} is not externally controlled in this scenario")]
    NotExternal(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::NoHello => "hello",
            SessionError::Version(_) => "version",
            SessionError::NotActive => "not_active",
            SessionError::AlreadyActive => "already_active",
            SessionError::Seq { .. } => "seq",
            SessionError::ScenarioRef(_) => "scenario",
            SessionError::NotExternal(_) => "vehicle",
            SessionError::Sim(_) => "sim",
            SessionError::Telemetry(_) => "telemetry",
        }
    }
}

/// Map served to clients that have not started a session yet.
pub fn default_map() -> MapSpec {
    teleop_scenario(0).resolve_map(None).expect("testbed grid is valid").0
}

/// Resolve `builtin:teleop[:seed]` or a scenario file under `scenario_dir`.
/// Returns the scenario and the directory its map references resolve against.
pub fn resolve_scenario_ref(
    reference: &str,
    scenario_dir: Option<&Path>,
) -> Result<(ScenarioSpec, Option<PathBuf>), SessionError> {
    if let Some(rest) = reference.strip_prefix(BUILTIN_PREFIX) {
        let mut parts = rest.splitn(2, ':');
        return match (parts.next(), parts.next()) {
            (Some("teleop"), None) => Ok((teleop_scenario(0), None)),
            (Some("teleop"), Some(seed)) => seed
                .parse()
                .map(|s| (teleop_scenario(s), None))
                .map_err(|_| SessionError::ScenarioRef(format!("bad seed {seed:?}"))),
            _ => Err(SessionError::ScenarioRef(format!("unknown builtin {reference:?}"))),
        };
    }
    let dir = scenario_dir.ok_or_else(|| SessionError::ScenarioRef("no scenario directory configured".into()))?;
    let rel = Path::new(reference);
    if reference.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(SessionError::ScenarioRef(format!("{reference:?} must be a plain relative path")));
    }
    let spec = load_scenario(&dir.join(rel))?;
    Ok((spec, Some(dir.to_path_buf())))
}

static SESSION_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Unique id and creation time for a live session.
pub fn fresh_identity(scenario_digest: &str, seed: u64) -> (String, String) {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let n = SESSION_COUNTER.fetch_add(1, Ordering::Relaxed);
    let id = format!("{}-{:x}-{n}", session_id_for(scenario_digest, seed), now.as_millis());
    (id, format_utc(now.as_secs()))
}

/// Options of a `start_session` request.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRequest {
    pub vehicle_id: String,
    pub backend: BackendName,
    pub driver_label: String,
    pub order_index: u32,
}

/// One teleoperated vehicle in its own world.
pub struct Session {
    sim: Simulation,
    vehicle_id: String,
    backend: BackendName,
    downlink: Channel,
    in_flight: VecDeque<(f64, ServerMessage)>,
    state_every: u64,
    base_dir: Option<PathBuf>,
}

impl Session {
    pub fn start(
        scenario: &ScenarioSpec,
        request: &SessionRequest,
        config: &ServiceConfig,
        base_dir: Option<&Path>,
        identity: (String, String),
    ) -> Result<Self, SessionError> {
        let mut scenario = scenario.clone();
        match scenario.vehicle(&request.vehicle_id).map(|v| &v.controller) {
            Some(ControllerSpec::External) => {}
            Some(_) => return Err(SessionError::NotExternal(request.vehicle_id.clone())),
            None => return Err(SimError::UnknownVehicle(request.vehicle_id.clone()).into()),
        }
        scenario.backend = match request.backend {
            BackendName::Sim => BackendDescriptor::sim(),
            BackendName::MockPhysical => BackendDescriptor {
                channel: config.channel,
                ..BackendDescriptor::mock_physical()
            },
        };
        scenario.subject = Some(request.vehicle_id.clone());
        scenario.driver_label = request.driver_label.clone();
        scenario.order_index = request.order_index;
        scenario.backend.validate()?;

        let mut sim = Simulation::new(&scenario, base_dir, &MemoryReplaySource::default())?;
        sim.set_failsafe_timeout(config.failsafe_timeout);
        let (session_id, created_at) = identity;
        let header = sim.header_mut();
        header.session_id = session_id;
        header.created_at = created_at;
        let channel = sim.scenario().backend.channel;
        let seed = channel_seed(
            sim.scenario().seed,
            channel.seed,
            &request.vehicle_id,
            LinkDirection::Downlink,
        );
        let physics_rate = 1.0 / sim.scenario().physics_dt;
        Ok(Self {
            downlink: Channel::new(channel, LinkDirection::Downlink, seed),
            sim,
            vehicle_id: request.vehicle_id.clone(),
            backend: request.backend,
            in_flight: VecDeque::new(),
            state_every: ((physics_rate / config.state_rate) - 1e-9).ceil().max(1.0) as u64,
            base_dir: base_dir.map(Path::to_path_buf),
        })
    }

    pub fn session_id(&self) -> &str {
        &self.sim.header().session_id
    }

    pub fn vehicle_id(&self) -> &str {
        &self.vehicle_id
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    /// Physics ticks between state messages.
    pub fn state_every(&self) -> u64 {
        self.state_every
    }

    pub fn is_finished(&self) -> bool {
        self.sim.is_finished()
    }

    /// Push a control onto the uplink. Returns false when the link lost it.
    pub fn control(&mut self, seq: u64, cmd: ActuatorCommand) -> Result<bool, SessionError> {
        Ok(self.sim.submit_control(&self.vehicle_id, seq, cmd)?)
    }

    /// Advance one physics tick. Returns the events it produced and any
    /// state messages whose downlink delay has elapsed.
    pub fn step(&mut self) -> Result<Vec<ServerMessage>, SessionError> {
        let events = self.sim.tick()?;
        let mut out: Vec<ServerMessage> = events
            .into_iter()
            .map(|e| ServerMessage::Event {
                kind: e.kind.as_str().into(),
                tick: e.tick,
                details: e.details,
            })
            .collect();
        let now = self.sim.world().sim_t();
        if self.sim.world().tick.is_multiple_of(self.state_every) {
            if let Some(at) = self.downlink.send(now) {
                self.in_flight.push_back((at, self.state_message()?));
            }
        }
        while self.in_flight.front().is_some_and(|(at, _)| *at <= now + 1e-9) {
            out.push(self.in_flight.pop_front().expect("non-empty").1);
        }
        Ok(out)
    }

    /// Snapshot for the client. The mock physical backend reports the
    /// fused sensor estimate; the sim backend reports ground truth.
    pub fn state_message(&self) -> Result<ServerMessage, SessionError> {
        let world = self.sim.world();
        let t = world.sim_t();
        let me = world
            .vehicles
            .get(&self.vehicle_id)
            .ok_or_else(|| SimError::UnknownVehicle(self.vehicle_id.clone()))?;
        let truth = me.state;
        let ego = match (self.backend, me.fusion().pose_at(t)) {
            (BackendName::MockPhysical, Some(p)) => EgoView {
                vehicle_id: self.vehicle_id.clone(),
                x: p.x,
                y: p.y,
                theta: p.theta,
                v: me.fused.v_hat,
                a: me.fused.a_hat,
            },
            _ => EgoView {
                vehicle_id: self.vehicle_id.clone(),
                x: truth.x,
                y: truth.y,
                theta: truth.theta,
                v: truth.v,
                a: truth.a,
            },
        };
        let others = world
            .vehicles
            .values()
            .filter(|o| o.id != self.vehicle_id)
            .filter(|o| (o.state.x - truth.x).hypot(o.state.y - truth.y) <= NEARBY_RADIUS)
            .map(|o| OtherView {
                vehicle_id: o.id.clone(),
                x: o.state.x,
                y: o.state.y,
                theta: o.state.theta,
                v: o.state.v,
            })
            .collect();
        let perception = self.sim.perception(&self.vehicle_id)?;
        let lights = perception
            .as_ref()
            .and_then(|p| p.light_ahead.as_ref())
            .map(|l| LightView {
                light_id: l.light_id.clone(),
                phase: l.state.phase,
                time_to_change: l.state.time_to_change,
                distance_to_stop_line: l.distance_to_stop_line,
            })
            .into_iter()
            .collect();
        Ok(ServerMessage::State {
            tick: world.tick,
            sim_t: t,
            hud: Hud {
                current_limit: perception.as_ref().map_or(0.0, |p| p.limits.current),
                lane_id: me.assignment.as_ref().map(|a| a.lane_id.clone()).unwrap_or_default(),
                speed: ego.v,
                failsafe: self.sim.failsafe_active(&self.vehicle_id),
            },
            ego,
            others,
            lights,
        })
    }

    /// Stop the session and write its log triplet under `dir`.
    pub fn end(mut self, dir: &Path) -> Result<ServerMessage, SessionError> {
        self.sim.finish();
        let scenario = self.sim.scenario().clone();
        let graph = self.sim.graph().clone();
        let log = self.sim.into_log();
        std::fs::create_dir_all(dir).map_err(TelemetryError::from)?;
        crate::sim::save_session(dir, &log, &scenario)?;
        let id = log.header.session_id.clone();
        Ok(ServerMessage::SessionEnded {
            telemetry_path: session_file(dir, &id, TELEMETRY_EXT).display().to_string(),
            metrics_summary: compute_metrics(&log, &graph).ok(),
            session_id: id,
        })
    }
}

/// Outcome of one inbound line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reply {
    pub messages: Vec<ServerMessage>,
    pub disconnect: bool,
}

/// Transport-independent state of one client connection.
pub struct Connection {
    config: ServiceConfig,
    map_digest: String,
    greeted: bool,
    session: Option<Session>,
    consecutive_errors: u32,
    last_seq: Option<u64>,
}

impl Connection {
    pub fn new(config: ServiceConfig, map_digest: String) -> Self {
        Self {
            config,
            map_digest,
            greeted: false,
            session: None,
            consecutive_errors: 0,
            last_seq: None,
        }
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn physics_dt(&self) -> Option<f64> {
        self.session.as_ref().map(|s| s.sim.scenario().physics_dt)
    }

    /// Handle one decoded (or undecodable) inbound line.
    pub fn handle(&mut self, decoded: Result<Decoded, ProtocolError>) -> Reply {
        let result = match decoded {
            Ok(d) => self.dispatch(d.message).map_err(|e| ServerMessage::error(e.code(), e.to_string())),
            Err(e) => Err(ServerMessage::error(e.code(), e.to_string())),
        };
        match result {
            Ok(messages) => {
                self.consecutive_errors = 0;
                Reply {
                    messages,
                    disconnect: false,
                }
            }
            Err(msg) => {
                self.consecutive_errors += 1;
                Reply {
                    messages: vec![msg],
                    disconnect: self.consecutive_errors >= MAX_CONSECUTIVE_ERRORS,
                }
            }
        }
    }

    pub fn handle_line(&mut self, line: &[u8]) -> Reply {
        self.handle(super::protocol::decode_bytes(line))
    }

    fn dispatch(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>, SessionError> {
        match msg {
            ClientMessage::Ping { nonce } => Ok(vec![ServerMessage::Pong {
                nonce,
                server_t: self.session.as_ref().map_or(0.0, |s| s.sim.world().sim_t()),
            }]),
            ClientMessage::Hello { protocol_version, .. } => {
                if protocol_version != PROTOCOL_VERSION {
                    return Err(SessionError::Version(protocol_version));
                }
                self.greeted = true;
                Ok(vec![ServerMessage::Welcome {
                    physics_rate: 1.0 / crate::sim::DEFAULT_PHYSICS_DT,
                    state_rate: self.config.state_rate,
                    map_digest: self.map_digest.clone(),
                }])
            }
            _ if !self.greeted => Err(SessionError::NoHello),
            ClientMessage::StartSession {
                scenario_ref,
                vehicle_id,
                backend,
                driver_label,
                order_index,
            } => {
                if self.session.is_some() {
                    return Err(SessionError::AlreadyActive);
                }
                let (scenario, base_dir) = resolve_scenario_ref(&scenario_ref, self.config.scenario_dir.as_deref())?;
                let normalized = scenario.normalized()?;
                let identity = fresh_identity(&normalized.digest(), normalized.seed);
                let request = SessionRequest {
                    vehicle_id,
                    backend,
                    driver_label,
                    order_index,
                };
                let session = Session::start(&normalized, &request, &self.config, base_dir.as_deref(), identity)?;
                let id = session.session_id().to_string();
                self.session = Some(session);
                self.last_seq = None;
                Ok(vec![ServerMessage::SessionStarted { session_id: id }])
            }
            ClientMessage::Control { seq, .. } => {
                let cmd = msg.command().expect("control message");
                let session = self.session.as_mut().ok_or(SessionError::NotActive)?;
                if let Some(last) = self.last_seq {
                    if seq <= last {
                        return Err(SessionError::Seq { last, got: seq });
                    }
                }
                self.last_seq = Some(seq);
                session.control(seq, cmd)?;
                Ok(Vec::new())
            }
            ClientMessage::StopSession {} => {
                let session = self.session.take().ok_or(SessionError::NotActive)?;
                Ok(vec![session.end(&self.config.data_dir)?])
            }
        }
    }

    /// Advance the active session by one physics tick; a session that runs
    /// out its scenario duration ends itself.
    pub fn tick(&mut self) -> Vec<ServerMessage> {
        let Some(session) = self.session.as_mut() else {
            return Vec::new();
        };
        let mut out = match session.step() {
            Ok(m) => m,
            Err(e) => vec![ServerMessage::error(e.code(), e.to_string())],
        };
        if session.is_finished() {
            out.extend(self.close());
        }
        out
    }

    /// End any active session, saving its log.
    pub fn close(&mut self) -> Option<ServerMessage> {
        let session = self.session.take()?;
        Some(
            session
                .end(&self.config.data_dir)
                .unwrap_or_else(|e| ServerMessage::error(e.code(), e.to_string())),
        )
    }
}
