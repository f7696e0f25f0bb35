//! Autonomous drivers parameterized by a personality vector: IDM car
//! following, pure-pursuit lane keeping, and signal/sign handling.

mod route;

pub use route::{plan_path, next_lane};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{MapError, MapGraph, SignKind};
use crate::plant::{speed_controller_ff, ActuatorCommand, SpeedCtlState, SpeedGains, VehicleParams, VehicleState};
use crate::traffic::{LightState, Phase, SpeedLimitView};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("non-positive gap to the leader")]
    DegenerateGap,
    #[error("no path beyond lane {lane}")]
    NoPath { lane: String },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("invalid profile field {field}: {reason}")]
    InvalidProfile { field: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonalityProfile {
    #[serde(rename = "time_headway_T")]
    pub time_headway: f64,
    pub min_gap_s0: f64,
    pub desired_speed_factor: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub amber_commit_decel: f64,
    pub limit_anticipation: f64,
    pub stop_sign_dwell: f64,
    pub lookahead_gain: f64,
}

impl PersonalityProfile {
    pub const DEFENSIVE: Self = Self {
        time_headway: 1.8,
        min_gap_s0: 0.12,
        desired_speed_factor: 0.95,
        max_accel: 0.4,
        comfort_decel: 0.5,
        amber_commit_decel: 1.5,
        limit_anticipation: 1.0,
        stop_sign_dwell: 2.0,
        lookahead_gain: 0.5,
    };

    pub const AGGRESSIVE: Self = Self {
        time_headway: 0.8,
        min_gap_s0: 0.08,
        desired_speed_factor: 1.15,
        max_accel: 0.8,
        comfort_decel: 0.9,
        amber_commit_decel: 1.0,
        limit_anticipation: 0.1,
        stop_sign_dwell: 0.5,
        lookahead_gain: 0.35,
    };

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "DEFENSIVE" => Some(Self::DEFENSIVE),
            "AGGRESSIVE" => Some(Self::AGGRESSIVE),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let fields = [
            ("time_headway_T", self.time_headway),
            ("min_gap_s0", self.min_gap_s0),
            ("desired_speed_factor", self.desired_speed_factor),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("limit_anticipation", self.limit_anticipation),
            ("stop_sign_dwell", self.stop_sign_dwell),
            ("lookahead_gain", self.lookahead_gain),
        ];
        for (field, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(AgentError::InvalidProfile {
                    field: field.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if !(0.5..=1.5).contains(&self.desired_speed_factor) {
            return Err(AgentError::InvalidProfile {
                field: "desired_speed_factor".into(),
                reason: "must lie in [0.5, 1.5]".into(),
            });
        }
        if !(self.amber_commit_decel >= 0.0) || !self.amber_commit_decel.is_finite() {
            return Err(AgentError::InvalidProfile {
                field: "amber_commit_decel".into(),
                reason: "must be non-negative".into(),
            });
        }
        Ok(())
    }

    /// Most negative acceleration the car-following law will request.
    pub fn decel_floor(&self) -> f64 {
        -2.0 * self.comfort_decel
    }
}

/// Intelligent Driver Model acceleration.
pub fn idm_accel(
    v: f64,
    v_desired: f64,
    gap: Option<f64>,
    lead_v: Option<f64>,
    profile: &PersonalityProfile,
) -> Result<f64, AgentError> {
    let p = profile;
    let mut a = p.max_accel * (1.0 - (v / v_desired).powi(4));
    if let Some(gap) = gap {
        if gap <= 0.0 {
            return Err(AgentError::DegenerateGap);
        }
        let dv = v - lead_v.unwrap_or(0.0);
        let s_star = (p.min_gap_s0 + v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt()))
            .max(p.min_gap_s0);
        a -= p.max_accel * (s_star / gap).powi(2);
    }
    Ok(a.clamp(p.decel_floor(), p.max_accel))
}

/// Pure-pursuit lookahead distance.
pub fn lookahead_distance(v: f64, profile: &PersonalityProfile) -> f64 {
    (profile.lookahead_gain * v).max(0.3)
}

/// Pure-pursuit steering toward the point `L_d` ahead along `path` (lane
/// ids, starting with the lane the vehicle is on at arc length `s`).
pub fn lane_follow_steer(
    state: &VehicleState,
    graph: &MapGraph,
    path: &[String],
    s: f64,
    profile: &PersonalityProfile,
    params: &VehicleParams,
) -> Result<f64, AgentError> {
    let first = path.first().ok_or_else(|| AgentError::NoPath { lane: String::new() })?;
    let mut remaining = s + lookahead_distance(state.v, profile);
    let mut target = None;
    for id in path {
        let lane = graph.lane_or_err(id)?;
        if remaining <= lane.length {
            target = Some(lane.centerline.pose_at(remaining));
            break;
        }
        remaining -= lane.length;
    }
    let target = target.ok_or_else(|| AgentError::NoPath {
        lane: path.last().unwrap_or(first).clone(),
    })?;
    Ok(pursuit_steer(state, target.x, target.y, params))
}

/// Steering command from the pure-pursuit law for a target point.
pub fn pursuit_steer(state: &VehicleState, tx: f64, ty: f64, params: &VehicleParams) -> f64 {
    let dx = tx - state.x;
    let dy = ty - state.y;
    let ld = dx.hypot(dy);
    if ld < 1e-9 {
        return 0.0;
    }
    let alpha = dy.atan2(dx) - state.theta;
    let delta = (2.0 * params.wheelbase * alpha.sin() / ld).atan();
    (delta / params.max_steer).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalDecision {
    Proceed,
    Stop,
    /// Red, but too close to stop: the driver goes through and the crossing
    /// is expected to be flagged.
    ProceedFlagged,
}

impl SignalDecision {
    pub fn is_stop(&self) -> bool {
        matches!(self, SignalDecision::Stop)
    }
}

pub fn required_decel(v: f64, d_stop: f64) -> f64 {
    v * v / (2.0 * d_stop.max(0.01))
}

pub fn signal_decision(v: f64, light: &LightState, d_stop: f64, profile: &PersonalityProfile) -> SignalDecision {
    let need = required_decel(v, d_stop);
    match light.phase {
        Phase::Green => SignalDecision::Proceed,
        Phase::Amber => {
            if need <= profile.amber_commit_decel {
                SignalDecision::Stop
            } else {
                SignalDecision::Proceed
            }
        }
        Phase::Red => {
            if need <= 2.0 * profile.comfort_decel {
                SignalDecision::Stop
            } else {
                SignalDecision::ProceedFlagged
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadInfo {
    /// Bumper-to-bumper distance along the path.
    pub gap: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightAhead {
    pub light_id: String,
    pub state: LightState,
    /// From the front bumper.
    pub distance_to_stop_line: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignAhead {
    /// Stable key (lane id and position) so a served stop is remembered.
    pub key: String,
    pub kind: SignKind,
    /// From the front bumper.
    pub distance: f64,
}

/// What an agent sees at one tick. Pose and lane come from ground truth;
/// `v_est` is the vehicle's own fused speed estimate.
#[derive(Debug, Clone)]
pub struct WorldSnapshot<'a> {
    pub t: f64,
    pub graph: &'a MapGraph,
    pub ego: VehicleState,
    pub v_est: f64,
    pub lane_id: String,
    pub s: f64,
    /// Current lane followed by the planned lanes ahead.
    pub path: Vec<String>,
    pub lead: Option<LeadInfo>,
    pub light_ahead: Option<LightAhead>,
    pub limits: SpeedLimitView,
    pub signs_ahead: Vec<SignAhead>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentCtlState {
    pub speed: SpeedCtlState,
    /// Integrated speed reference tracked by the PI loop.
    pub v_ref: f64,
    pub dwell_since: Option<f64>,
    pub served_stop: Option<String>,
}

/// Bumper clearance kept before a stop line.
pub const STOP_MARGIN: f64 = 0.02;
const STOPPED_V: f64 = 0.01;
const STOP_SIGN_ZONE: f64 = 0.3;
const YIELD_ZONE: f64 = 1.0;
const CONTROL_DT: f64 = 0.01;
const TRACKING_GAINS: SpeedGains = SpeedGains { kp: 1.0, ki: 0.5 };

/// Acceleration that brings the front bumper to rest just short of a line
/// `d` ahead: an IDM standing-obstacle law, tightened to the
/// constant-deceleration stopping profile once that profile asks for more
/// than half the comfortable deceleration. A vehicle standing well short of
/// the line still creeps up to it.
pub fn stopping_accel(v: f64, v_desired: f64, d: f64, profile: &PersonalityProfile) -> f64 {
    let room = d - STOP_MARGIN;
    let idm = idm_accel(v, v_desired, Some(room + profile.min_gap_s0), Some(0.0), profile).unwrap_or(profile.decel_floor());
    let kinematic = if room > 1e-3 {
        -v * v / (2.0 * room)
    } else if v > 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let a = if kinematic <= -0.5 * profile.comfort_decel || room <= 1e-3 {
        idm.min(kinematic)
    } else {
        idm
    };
    a.max(-2.0 * profile.comfort_decel.max(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub cmd: ActuatorCommand,
    pub state: AgentCtlState,
    pub target_accel: f64,
    pub signal: Option<SignalDecision>,
}

pub fn agent_policy(
    snap: &WorldSnapshot<'_>,
    profile: &PersonalityProfile,
    params: &VehicleParams,
    ctl: &AgentCtlState,
) -> Result<PolicyOutput, AgentError> {
    let mut next = ctl.clone();
    let v = snap.v_est.max(0.0);

    let mut limit = snap.limits.current;
    if let Some(up) = snap.limits.upcoming {
        if up.distance <= profile.limit_anticipation {
            limit = limit.min(up.limit);
        }
    }
    let mut v_desired = (profile.desired_speed_factor * limit).max(1e-3);

    for sign in &snap.signs_ahead {
        if sign.kind == SignKind::Yield && sign.distance <= YIELD_ZONE {
            v_desired = v_desired.min(0.5 * profile.desired_speed_factor * limit).max(1e-3);
        }
    }

    let mut a = idm_accel(v, v_desired, snap.lead.map(|l| l.gap), snap.lead.map(|l| l.v), profile)
        .unwrap_or(profile.decel_floor());

    let mut signal = None;
    if let Some(light) = &snap.light_ahead {
        let d = light.distance_to_stop_line.max(0.0);
        let decision = signal_decision(v, &light.state, d, profile);
        if decision.is_stop() {
            a = a.min(stopping_accel(v, v_desired, d, profile));
        }
        signal = Some(decision);
    }

    // stop signs: halt, dwell, then carry on
    if let Some(sign) = snap
        .signs_ahead
        .iter()
        .find(|s| s.kind == SignKind::Stop && next.served_stop.as_deref() != Some(s.key.as_str()))
    {
        let stopped_here = v < STOPPED_V && sign.distance <= STOP_SIGN_ZONE;
        if stopped_here {
            let since = *next.dwell_since.get_or_insert(snap.t);
            if snap.t - since >= profile.stop_sign_dwell {
                next.served_stop = Some(sign.key.clone());
                next.dwell_since = None;
            } else {
                a = a.min(stopping_accel(v, v_desired, sign.distance, profile));
            }
        } else {
            next.dwell_since = None;
            a = a.min(stopping_accel(v, v_desired, sign.distance, profile));
        }
    }

    // integrated reference, re-anchored when it drifts from the estimate
    let mut v_ref = next.v_ref + a * CONTROL_DT;
    if (v_ref - v).abs() > 0.1 {
        v_ref = v + a * CONTROL_DT;
    }
    v_ref = v_ref.max(0.0);
    next.v_ref = v_ref;

    let effort = a + params.drag_coeff * v;
    let ff = if effort >= 0.0 {
        effort / params.motor_gain
    } else {
        effort / params.max_brake_decel
    };
    let out = speed_controller_ff(v_ref, v, ff, next.speed, TRACKING_GAINS, CONTROL_DT);
    next.speed = out.state;

    let steer = lane_follow_steer(&snap.ego, snap.graph, &snap.path, snap.s, profile, params)?;
    Ok(PolicyOutput {
        cmd: ActuatorCommand::new(steer, out.throttle, out.brake),
        state: next,
        target_accel: a,
        signal,
    })
}
