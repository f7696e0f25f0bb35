//! The standard evaluation scenarios on the default testbed grid.

use super::scenario::{
    BackendDescriptor, ControllerSpec, GridArgs, MapSource, ProfileSpec, ScenarioSpec, StartSpec, VehicleSpec,
};
use crate::agent::PersonalityProfile;
use crate::canon::hash64;
use crate::map::{TESTBED_BLOCK_LENGTH, TESTBED_COLS, TESTBED_LANE_WIDTH, TESTBED_ROWS, TESTBED_SPEED_LIMIT};
use crate::plant::{NoiseConfig, VehicleParams};

pub const STANDARD_DURATION: f64 = 60.0;
pub const SUBJECT_ID: &str = "subject";
pub const PACER_ID: &str = "pacer";
/// Speed factor of the slower lead vehicle the subject catches up with.
pub const PACER_SPEED_FACTOR: f64 = 0.85;

pub fn testbed_grid_args() -> GridArgs {
    GridArgs {
        rows: TESTBED_ROWS,
        cols: TESTBED_COLS,
        block_length: TESTBED_BLOCK_LENGTH,
        lane_width: TESTBED_LANE_WIDTH,
        speed_limit: TESTBED_SPEED_LIMIT,
    }
}

/// Counter-clockwise loop around the block whose lower-left node is
/// (row, col): east, north, west, south. Every turn is a left turn.
pub fn block_loop_route(row: usize, col: usize) -> Vec<String> {
    vec![
        format!("h{row:02}_{col:02}:f0"),
        format!("v{row:02}_{:02}:f0", col + 1),
        format!("h{:02}_{col:02}:b0", row + 1),
        format!("v{row:02}_{col:02}:b0"),
    ]
}

/// Uniform in [0, 1) derived from the seed and a label.
fn unit(seed: u64, label: &str) -> f64 {
    (hash64(&format!("{seed}:{label}")) >> 11) as f64 / (1u64 << 53) as f64
}

fn agent(id: &str, lane: &str, s: f64, profile: ProfileSpec, route: &[String]) -> VehicleSpec {
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
            profile,
            route: Some(route.to_vec()),
        },
    }
}

pub fn pacer_profile() -> PersonalityProfile {
    PersonalityProfile {
        desired_speed_factor: PACER_SPEED_FACTOR,
        ..PersonalityProfile::DEFENSIVE
    }
}

/// Vehicle id a teleoperated driver takes over in the built-in scenario.
pub const TELEOP_VEHICLE_ID: &str = "ego";
pub const TELEOP_DURATION: f64 = 600.0;

/// Built-in teleoperation scenario: an externally driven vehicle on the
/// block loop at (0, 0) and DEFENSIVE background traffic on the loop at (2, 1).
pub fn teleop_scenario(seed: u64) -> ScenarioSpec {
    let ego_route = block_loop_route(0, 0);
    let traffic_route = block_loop_route(2, 1);
    let mut ego = agent(TELEOP_VEHICLE_ID, &ego_route[0], 0.1, ProfileSpec::Preset("DEFENSIVE".into()), &ego_route);
    ego.controller = ControllerSpec::External;
    ScenarioSpec {
        name: "teleop".into(),
        map: MapSource::Grid(testbed_grid_args()),
        duration: TELEOP_DURATION,
        physics_dt: 0.01,
        seed,
        vehicles: vec![
            ego,
            agent(
                "traffic",
                &traffic_route[0],
                0.2,
                ProfileSpec::Preset("DEFENSIVE".into()),
                &traffic_route,
            ),
        ],
        light_overrides: Vec::new(),
        backend: BackendDescriptor::sim(),
        subject: Some(TELEOP_VEHICLE_ID.into()),
        driver_label: String::new(),
        order_index: 0,
    }
}

/// Subject driving `profile` on the block loop at (0, 0) behind a slower
/// pacer. The seed moves both start positions.
pub fn standard_scenario(profile: ProfileSpec, seed: u64) -> ScenarioSpec {
    let route = block_loop_route(0, 0);
    let subject_s = 0.05 + 0.25 * unit(seed, "subject");
    let pacer_s = 0.1 + 0.4 * unit(seed, "pacer");
    ScenarioSpec {
        name: "standard".into(),
        map: MapSource::Grid(testbed_grid_args()),
        duration: STANDARD_DURATION,
        physics_dt: 0.01,
        seed,
        vehicles: vec![
            agent(SUBJECT_ID, &route[0], subject_s, profile, &route),
            agent(PACER_ID, &route[1], pacer_s, ProfileSpec::Explicit(pacer_profile()), &route),
        ],
        light_overrides: Vec::new(),
        backend: BackendDescriptor::sim(),
        subject: Some(SUBJECT_ID.into()),
        driver_label: String::new(),
        order_index: 0,
    }
}

/// One AGGRESSIVE and one DEFENSIVE agent on disjoint block loops.
pub fn mixed_scenario(seed: u64) -> ScenarioSpec {
    let a = block_loop_route(0, 0);
    let d = block_loop_route(2, 1);
    ScenarioSpec {
        name: "mixed".into(),
        map: MapSource::Grid(testbed_grid_args()),
        duration: STANDARD_DURATION,
        physics_dt: 0.01,
        seed,
        vehicles: vec![
            agent("aggressive", &a[0], 0.05 + 0.4 * unit(seed, "a"), ProfileSpec::Preset("AGGRESSIVE".into()), &a),
            agent("defensive", &d[0], 0.05 + 0.4 * unit(seed, "d"), ProfileSpec::Preset("DEFENSIVE".into()), &d),
        ],
        light_overrides: Vec::new(),
        backend: BackendDescriptor::sim(),
        subject: Some("aggressive".into()),
        driver_label: String::new(),
        order_index: 0,
    }
}
