use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedGains {
    pub kp: f64,
    pub ki: f64,
}

impl Default for SpeedGains {
    fn default() -> Self {
        Self { kp: 1.5, ki: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpeedCtlState {
    pub integral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedOutput {
    pub throttle: f64,
    pub brake: f64,
    pub state: SpeedCtlState,
}

/// PI speed loop mapped onto throttle/brake, integral frozen while the
/// output saturates.
pub fn speed_controller(target_v: f64, v_est: f64, state: SpeedCtlState, gains: SpeedGains, dt: f64) -> SpeedOutput {
    speed_controller_ff(target_v, v_est, 0.0, state, gains, dt)
}

/// PI speed loop with an additive feedforward effort (normalized units).
pub fn speed_controller_ff(
    target_v: f64,
    v_est: f64,
    feedforward: f64,
    state: SpeedCtlState,
    gains: SpeedGains,
    dt: f64,
) -> SpeedOutput {
    let e = target_v.max(0.0) - v_est;
    let candidate = state.integral + e * dt;
    let u_candidate = feedforward + gains.kp * e + gains.ki * candidate;
    let (integral, u) = if u_candidate.abs() > 1.0 {
        (state.integral, feedforward + gains.kp * e + gains.ki * state.integral)
    } else {
        (candidate, u_candidate)
    };
    let (throttle, brake) = if u >= 0.0 { (u.min(1.0), 0.0) } else { (0.0, (-u).min(1.0)) };
    SpeedOutput {
        throttle,
        brake,
        state: SpeedCtlState { integral },
    }
}
