use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::SimError;
use crate::agent::PersonalityProfile;
use crate::canon;
use crate::map::{build_graph, generate_grid, parse_map, MapGraph, MapSpec};
use crate::plant::{NoiseConfig, VehicleParams};
use crate::teleop::ChannelModel;
use crate::traffic::LightPhaseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridArgs {
    pub rows: usize,
    pub cols: usize,
    pub block_length: f64,
    pub lane_width: f64,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSource {
    Grid(GridArgs),
    Embedded(MapSpec),
    /// Map file on disk; the digest must match the file's content.
    File { path: String, digest: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Preset(String),
    Explicit(PersonalityProfile),
}

impl ProfileSpec {
    pub fn resolve(&self) -> Result<PersonalityProfile, SimError> {
        let p = match self {
            ProfileSpec::Preset(name) => {
                PersonalityProfile::preset(name).ok_or_else(|| SimError::Scenario(format!("unknown preset {name:?}")))?
            }
            ProfileSpec::Explicit(p) => *p,
        };
        p.validate().map_err(|e| SimError::Scenario(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    Agent {
        profile: ProfileSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        route: Option<Vec<String>>,
    },
    /// Commands arrive from outside (a teleoperation client).
    External,
    /// Commands recorded in an earlier session: `<session prefix>` or
    /// `<session prefix>#<vehicle_id>`.
    Replay { log_ref: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub lane_id: String,
    pub s: f64,
    #[serde(default)]
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub vehicle_id: String,
    #[serde(default)]
    pub params: VehicleParams,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub start: StartSpec,
    pub controller: ControllerSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Sim,
    MockPhysical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actuation {
    Direct,
    Pwm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub channel: ChannelModel,
    pub actuation: Actuation,
    /// When false every vehicle's noise terms are zeroed (timing is kept).
    pub sensor_noise: bool,
}

impl Default for BackendDescriptor {
    fn default() -> Self {
        Self::sim()
    }
}

impl BackendDescriptor {
    pub fn sim() -> Self {
        Self {
            kind: BackendKind::Sim,
            channel: ChannelModel::zero(),
            actuation: Actuation::Direct,
            sensor_noise: true,
        }
    }

    pub fn mock_physical() -> Self {
        Self {
            kind: BackendKind::MockPhysical,
            channel: ChannelModel::mock_physical(),
            actuation: Actuation::Pwm,
            sensor_noise: true,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "sim" => Some(Self::sim()),
            "mock_physical" => Some(Self::mock_physical()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.channel.validate().map_err(SimError::Scenario)?;
        if self.kind == BackendKind::Sim && (!self.channel.is_zero() || self.actuation != Actuation::Direct) {
            return Err(SimError::Scenario(
                "sim backend requires a zero channel and direct actuation".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightOverride {
    pub light_id: String,
    pub schedule: LightPhaseSchedule,
}

pub const DEFAULT_PHYSICS_DT: f64 = 0.01;

fn default_dt() -> f64 {
    DEFAULT_PHYSICS_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub map: MapSource,
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub physics_dt: f64,
    pub seed: u64,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub light_overrides: Vec<LightOverride>,
    #[serde(default)]
    pub backend: BackendDescriptor,
    /// Vehicle whose behaviour the session is about (metrics, fitting).
    /// Defaults to the lowest vehicle id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default)]
    pub driver_label: String,
    #[serde(default)]
    pub order_index: u32,
}

impl ScenarioSpec {
    pub fn to_canonical(&self) -> String {
        canon::to_pretty(self).expect("scenario serializes")
    }

    pub fn digest(&self) -> String {
        canon::digest64(canon::to_line(self).expect("scenario serializes").as_bytes())
    }

    /// The form a run actually uses: vehicles and overrides sorted by id and
    /// every real snapped to the canonical grid, so a run and a replay from
    /// the stored scenario file see identical inputs.
    pub fn normalized(&self) -> Result<Self, SimError> {
        let mut s = self.clone();
        s.vehicles.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id));
        s.light_overrides.sort_by(|a, b| a.light_id.cmp(&b.light_id));
        parse_scenario(&s.to_canonical())
    }

    pub fn ticks(&self) -> u64 {
        (self.duration / self.physics_dt).round() as u64
    }

    pub fn subject_id(&self) -> Option<String> {
        self.subject
            .clone()
            .or_else(|| self.vehicles.iter().map(|v| v.vehicle_id.clone()).min())
    }

    pub fn vehicle(&self, id: &str) -> Option<&VehicleSpec> {
        self.vehicles.iter().find(|v| v.vehicle_id == id)
    }

    pub fn vehicle_mut(&mut self, id: &str) -> Option<&mut VehicleSpec> {
        self.vehicles.iter_mut().find(|v| v.vehicle_id == id)
    }

    /// Load the map, check its digest where one is declared, and build the
    /// lane graph with light overrides applied. Relative map paths resolve
    /// against `base_dir`.
    pub fn resolve_map(&self, base_dir: Option<&Path>) -> Result<(MapSpec, MapGraph), SimError> {
        let spec = match &self.map {
            MapSource::Grid(g) => generate_grid(g.rows, g.cols, g.block_length, g.lane_width, g.speed_limit)?,
            MapSource::Embedded(m) => m.clone(),
            MapSource::File { path, digest } => {
                let mut p = PathBuf::from(path);
                if p.is_relative() {
                    if let Some(base) = base_dir {
                        p = base.join(p);
                    }
                }
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| SimError::Scenario(format!("cannot read map {}: {e}", p.display())))?;
                let m = parse_map(&text)?;
                let actual = m.digest();
                if actual != *digest {
                    return Err(SimError::DigestMismatch {
                        expected: digest.clone(),
                        actual,
                    });
                }
                m
            }
        };
        let mut graph = build_graph(&spec)?;
        for o in &self.light_overrides {
            let mut hit = false;
            for l in graph.lights.iter_mut().filter(|l| l.light_id == o.light_id) {
                l.schedule = o.schedule;
                hit = true;
            }
            if !hit {
                return Err(SimError::Scenario(format!("override for unknown light {:?}", o.light_id)));
            }
        }
        Ok((spec, graph))
    }

    pub fn validate(&self, graph: &MapGraph) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if !(self.physics_dt > 0.0) || !self.physics_dt.is_finite() {
            return bad("physics_dt must be positive".into());
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return bad("duration must be non-negative".into());
        }
        self.backend.validate()?;
        let mut seen = BTreeSet::new();
        for v in &self.vehicles {
            if !seen.insert(v.vehicle_id.as_str()) {
                return bad(format!("duplicate vehicle id {:?}", v.vehicle_id));
            }
            if v.vehicle_id.is_empty() || v.vehicle_id.contains(',') || v.vehicle_id.contains('\n') {
                return bad(format!("invalid vehicle id {:?}", v.vehicle_id));
            }
            v.params
                .validate()
                .map_err(|e| SimError::Scenario(format!("{}: {e}", v.vehicle_id)))?;
            v.noise
                .validate()
                .map_err(|e| SimError::Scenario(format!("{}: {e}", v.vehicle_id)))?;
            let window = v.noise.sensor_window / self.physics_dt;
            if (window - window.round()).abs() > 1e-6 || window.round() < 1.0 {
                return bad(format!("{}: sensor_window must be a whole number of ticks", v.vehicle_id));
            }
            let lane = graph
                .lane(&v.start.lane_id)
                .ok_or_else(|| SimError::Scenario(format!("{}: unknown start lane {:?}", v.vehicle_id, v.start.lane_id)))?;
            if !(0.0..=lane.length).contains(&v.start.s) {
                return bad(format!("{}: start s outside lane", v.vehicle_id));
            }
            if !(v.start.v0 >= 0.0) {
                return bad(format!("{}: v0 must be non-negative", v.vehicle_id));
            }
            match &v.controller {
                ControllerSpec::Agent { profile, route } => {
                    profile.resolve()?;
                    for id in route.iter().flatten() {
                        if graph.lane(id).is_none() {
                            return bad(format!("{}: route lane {id:?} unknown", v.vehicle_id));
                        }
                    }
                }
                ControllerSpec::External | ControllerSpec::Replay { .. } => {}
            }
        }
        if let Some(s) = &self.subject {
            if !seen.contains(s.as_str()) {
                return bad(format!("subject {s:?} is not a vehicle"));
            }
        }
        Ok(())
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, SimError> {
    serde_json::from_str(text).map_err(|e| SimError::Scenario(format!("line {}: {e}", e.line())))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, SimError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Scenario(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ScenarioSpec {
        ScenarioSpec {
            name: "t".into(),
            map: MapSource::Grid(GridArgs {
                rows: 2,
                cols: 2,
                block_length: 1.2,
                lane_width: 0.15,
                speed_limit: 0.6,
            }),
            duration: 1.0,
            physics_dt: 0.01,
            seed: 1,
            vehicles: vec![VehicleSpec {
                vehicle_id: "a".into(),
                params: VehicleParams::default(),
                noise: NoiseConfig::default(),
                start: StartSpec {
                    lane_id: "h00_00:f0".into(),
                    s: 0.1,
                    v0: 0.0,
                },
                controller: ControllerSpec::Agent {
                    profile: ProfileSpec::Preset("DEFENSIVE".into()),
                    route: None,
                },
            }],
            light_overrides: vec![],
            backend: BackendDescriptor::sim(),
            subject: None,
            driver_label: String::new(),
            order_index: 0,
        }
    }

    #[test]
    fn round_trips_through_text() {
        let s = minimal().normalized().unwrap();
        let back = parse_scenario(&s.to_canonical()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.digest(), s.digest());
    }

    #[test]
    fn explicit_profile_parses() {
        let mut s = minimal();
        s.vehicles[0].controller = ControllerSpec::Agent {
            profile: ProfileSpec::Explicit(PersonalityProfile::AGGRESSIVE),
            route: None,
        };
        let s = s.normalized().unwrap();
        let back = parse_scenario(&s.to_canonical()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn validation_catches_bad_starts() {
        let s = minimal();
        let (_, g) = s.resolve_map(None).unwrap();
        s.validate(&g).unwrap();
        let mut dup = s.clone();
        dup.vehicles.push(dup.vehicles[0].clone());
        assert!(dup.validate(&g).is_err());
        let mut lane = s.clone();
        lane.vehicles[0].start.lane_id = "nope".into();
        assert!(lane.validate(&g).is_err());
        let mut backend = s.clone();
        backend.backend.actuation = Actuation::Pwm;
        assert!(backend.validate(&g).is_err());
    }

    #[test]
    fn map_file_digest_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let map = generate_grid(2, 2, 1.0, 0.15, 0.5).unwrap();
        std::fs::write(dir.path().join("m.json"), map.to_canonical()).unwrap();
        let mut s = minimal();
        s.map = MapSource::File {
            path: "m.json".into(),
            digest: map.digest(),
        };
        assert!(s.resolve_map(Some(dir.path())).is_ok());
        s.map = MapSource::File {
            path: "m.json".into(),
            digest: "0000000000000000".into(),
        };
        assert!(matches!(
            s.resolve_map(Some(dir.path())),
            Err(SimError::DigestMismatch { .. })
        ));
    }
}
