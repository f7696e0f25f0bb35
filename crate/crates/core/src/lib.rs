//! Deterministic miniature-city driving simulator: lane-level maps, a
//! kinematic vehicle plant with simulated sensors, personality-driven
//! autonomous drivers, a fixed-step world stepper, a teleoperation service,
//! and session telemetry with driving-style analytics.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod canon;
pub mod map;
pub mod plant;
pub mod traffic;
pub mod sim;
pub mod teleop;
pub mod telemetry;
