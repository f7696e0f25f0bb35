//! Fixed-timestep world stepper, event detection and headless scenario
//! runs.

mod collision;
mod run;
mod scenario;
mod standard;
mod world;

pub use collision::{detect_collision_pairs, overlaps, Footprint};
pub use run::{
    channel_seed, replay_commands, run_headless, save_session, Controller, MemoryReplaySource, FileReplaySource,
    ReplaySource, Simulation,
};
pub use scenario::{
    load_scenario, parse_scenario, Actuation, BackendDescriptor, BackendKind, ControllerSpec, GridArgs, LightOverride,
    MapSource, ProfileSpec, ScenarioSpec, StartSpec, VehicleSpec, DEFAULT_PHYSICS_DT,
};
pub use standard::{
    block_loop_route, mixed_scenario, pacer_profile, standard_scenario, teleop_scenario, testbed_grid_args, PACER_ID,
    PACER_SPEED_FACTOR, STANDARD_DURATION, SUBJECT_ID, TELEOP_DURATION, TELEOP_VEHICLE_ID,
};
pub use world::{
    perceive, step_world, vehicle_seed, EventKind, EventRecord, Perception, VehicleSim, WorldState, PATH_HORIZON,
    PERCEPTION_RANGE,
};

use thiserror::Error;

use crate::agent::AgentError;
use crate::map::MapError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("digest mismatch: expected {expected}, found {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("unknown vehicle {0:?}")]
    UnknownVehicle(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}
