//! Vehicle plant: actuation chain, kinematic dynamics, speed control,
//! simulated sensors and onboard state estimation.

mod control;
mod dynamics;
mod fusion;
mod sensors;

pub use control::{speed_controller, speed_controller_ff, SpeedCtlState, SpeedGains, SpeedOutput};
pub use dynamics::{step_dynamics, STEER_TIME_CONSTANT};
pub use fusion::{fuse_estimate, FusedEstimate, FusionFilter, PoseEstimate, ALPHA, ARBITER_THRESHOLD};
pub use sensors::{NoiseConfig, OverheadPose, SensorFrame, SensorSuite};

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("insufficient sensor data for state estimation")]
    InsufficientData,
    #[error("invalid vehicle parameter {field}: {reason}")]
    InvalidParams { field: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub wheel_diameter: f64,
    pub track_width: f64,
    pub body_length: f64,
    pub max_steer: f64,
    /// (m/s^2) per unit throttle
    pub motor_gain: f64,
    /// 1/s
    pub drag_coeff: f64,
    pub max_brake_decel: f64,
    pub encoder_ticks_per_rev: u32,
    /// microseconds
    pub pwm_neutral: u32,
    pub pwm_span: u32,
    pub steer_deadband: u32,
    pub throttle_deadband: u32,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.16,
            wheel_diameter: 0.064,
            track_width: 0.12,
            body_length: 0.23,
            max_steer: 0.45,
            motor_gain: 2.0,
            drag_coeff: 0.5,
            max_brake_decel: 2.0,
            encoder_ticks_per_rev: 40,
            pwm_neutral: 1500,
            pwm_span: 500,
            steer_deadband: 10,
            throttle_deadband: 10,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let reals = [
            ("wheelbase", self.wheelbase),
            ("wheel_diameter", self.wheel_diameter),
            ("track_width", self.track_width),
            ("body_length", self.body_length),
            ("max_steer", self.max_steer),
            ("motor_gain", self.motor_gain),
            ("drag_coeff", self.drag_coeff),
            ("max_brake_decel", self.max_brake_decel),
        ];
        for (name, v) in reals {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PlantError::InvalidParams {
                    field: name.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if self.max_steer >= FRAC_PI_2 {
            return Err(PlantError::InvalidParams {
                field: "max_steer".into(),
                reason: "must be below pi/2".into(),
            });
        }
        let ints = [
            ("encoder_ticks_per_rev", self.encoder_ticks_per_rev),
            ("pwm_neutral", self.pwm_neutral),
            ("pwm_span", self.pwm_span),
            ("steer_deadband", self.steer_deadband),
            ("throttle_deadband", self.throttle_deadband),
        ];
        for (name, v) in ints {
            if v == 0 {
                return Err(PlantError::InvalidParams {
                    field: name.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if self.steer_deadband >= self.pwm_span || self.throttle_deadband >= self.pwm_span {
            return Err(PlantError::InvalidParams {
                field: "deadband".into(),
                reason: "must be smaller than pwm_span".into(),
            });
        }
        if self.pwm_span > self.pwm_neutral {
            return Err(PlantError::InvalidParams {
                field: "pwm_span".into(),
                reason: "must not exceed pwm_neutral".into(),
            });
        }
        Ok(())
    }

    /// Wheel circumference divided by encoder resolution: metres per tick.
    pub fn metres_per_tick(&self) -> f64 {
        std::f64::consts::PI * self.wheel_diameter / self.encoder_ticks_per_rev as f64
    }

    /// Distance from the rear axle (the state reference point) to the
    /// footprint centre.
    pub fn centre_offset(&self) -> f64 {
        self.wheelbase / 2.0
    }

    /// Distance from the rear axle to the front bumper.
    pub fn front_offset(&self) -> f64 {
        self.wheelbase / 2.0 + self.body_length / 2.0
    }

    /// Distance from the rear axle back to the rear bumper.
    pub fn rear_offset(&self) -> f64 {
        self.body_length / 2.0 - self.wheelbase / 2.0
    }
}

/// Ground-truth vehicle state at the rear axle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub a: f64,
    pub delta: f64,
}

/// Normalized driver command. Construction clamps every field.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl ActuatorCommand {
    pub fn new(steer: f64, throttle: f64, brake: f64) -> Self {
        Self::new_checked(steer, throttle, brake).0
    }

    /// Clamp into range, reporting whether anything had to be clamped.
    /// Non-finite inputs become zero.
    pub fn new_checked(steer: f64, throttle: f64, brake: f64) -> (Self, bool) {
        let fix = |v: f64, lo: f64, hi: f64| {
            if !v.is_finite() {
                (0.0, true)
            } else {
                let c = v.clamp(lo, hi);
                (c, c != v)
            }
        };
        let (s, a) = fix(steer, -1.0, 1.0);
        let (t, b) = fix(throttle, 0.0, 1.0);
        let (br, c) = fix(brake, 0.0, 1.0);
        (
            Self {
                steer: s,
                throttle: t,
                brake: br,
            },
            a || b || c,
        )
    }

    /// Quantize to the six-decimal grid used by telemetry, so a recorded
    /// command replays bit-exactly.
    pub fn quantized(self) -> Self {
        use crate::canon::quantize;
        Self {
            steer: quantize(self.steer),
            throttle: quantize(self.throttle),
            brake: quantize(self.brake),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PwmFrame {
    pub steer_us: i32,
    pub throttle_us: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantInputs {
    pub delta_cmd: f64,
    pub accel_cmd: f64,
}

/// Normalized command to servo/ESC pulse widths, rounded half away from
/// zero to whole microseconds.
pub fn command_to_pwm(cmd: &ActuatorCommand, params: &VehicleParams) -> PwmFrame {
    let neutral = params.pwm_neutral as f64;
    let span = params.pwm_span as f64;
    let lo = neutral - span;
    let hi = neutral + span;
    let steer_us = (neutral + cmd.steer * span).round().clamp(lo, hi) as i32;
    let throttle_us = (neutral + (cmd.throttle - cmd.brake) * span).round().clamp(lo, hi) as i32;
    PwmFrame { steer_us, throttle_us }
}

fn deadband_normalize(us: i32, neutral: u32, span: u32, deadband: u32) -> f64 {
    let offset = us as f64 - neutral as f64;
    let db = deadband as f64;
    if offset.abs() <= db {
        return 0.0;
    }
    ((offset - offset.signum() * db) / (span as f64 - db)).clamp(-1.0, 1.0)
}

/// Inverse leg of the PWM chain, including the servo/ESC deadband.
pub fn pwm_to_plant_inputs(pwm: &PwmFrame, params: &VehicleParams) -> PlantInputs {
    let steer = deadband_normalize(pwm.steer_us, params.pwm_neutral, params.pwm_span, params.steer_deadband);
    let u = deadband_normalize(
        pwm.throttle_us,
        params.pwm_neutral,
        params.pwm_span,
        params.throttle_deadband,
    );
    PlantInputs {
        delta_cmd: params.max_steer * steer,
        accel_cmd: accel_from_effort(u, params),
    }
}

/// Direct (unquantized, deadband-free) actuation used by the sim backend.
pub fn direct_plant_inputs(cmd: &ActuatorCommand, params: &VehicleParams) -> PlantInputs {
    PlantInputs {
        delta_cmd: params.max_steer * cmd.steer,
        accel_cmd: accel_from_effort(cmd.throttle - cmd.brake, params),
    }
}

fn accel_from_effort(u: f64, params: &VehicleParams) -> f64 {
    if u >= 0.0 {
        params.motor_gain * u
    } else {
        params.max_brake_decel * u
    }
}
