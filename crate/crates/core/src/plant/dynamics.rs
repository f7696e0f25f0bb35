use super::{PlantInputs, VehicleParams, VehicleState};
use crate::map::geometry::wrap_angle;

/// Steering servo first-order lag.
pub const STEER_TIME_CONSTANT: f64 = 0.05;

#[derive(Clone, Copy)]
struct Deriv {
    x: f64,
    y: f64,
    theta: f64,
    v: f64,
    delta: f64,
}

fn derivative(s: &Deriv, inputs: &PlantInputs, params: &VehicleParams) -> Deriv {
    let v = s.v.max(0.0);
    let mut dv = inputs.accel_cmd - params.drag_coeff * v;
    if s.v <= 0.0 && dv < 0.0 {
        dv = 0.0;
    }
    Deriv {
        x: v * s.theta.cos(),
        y: v * s.theta.sin(),
        theta: v * s.delta.tan() / params.wheelbase,
        v: dv,
        delta: (inputs.delta_cmd - s.delta) / STEER_TIME_CONSTANT,
    }
}

fn axpy(base: &Deriv, k: &Deriv, h: f64) -> Deriv {
    Deriv {
        x: base.x + h * k.x,
        y: base.y + h * k.y,
        theta: base.theta + h * k.theta,
        v: base.v + h * k.v,
        delta: base.delta + h * k.delta,
    }
}

/// Advance the kinematic bicycle model by `dt` with classical RK4.
///
/// Speed is clamped at zero (no reverse), the steering angle tracks
/// `delta_cmd` through a first-order lag, and the returned `a` is the
/// realized speed change over the step.
pub fn step_dynamics(state: &VehicleState, inputs: &PlantInputs, params: &VehicleParams, dt: f64) -> VehicleState {
    let inputs = PlantInputs {
        delta_cmd: inputs.delta_cmd.clamp(-params.max_steer, params.max_steer),
        accel_cmd: inputs.accel_cmd,
    };
    let s0 = Deriv {
        x: state.x,
        y: state.y,
        theta: state.theta,
        v: state.v,
        delta: state.delta,
    };
    let k1 = derivative(&s0, &inputs, params);
    let k2 = derivative(&axpy(&s0, &k1, dt / 2.0), &inputs, params);
    let k3 = derivative(&axpy(&s0, &k2, dt / 2.0), &inputs, params);
    let k4 = derivative(&axpy(&s0, &k3, dt), &inputs, params);
    let w = dt / 6.0;
    let next = Deriv {
        x: s0.x + w * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
        y: s0.y + w * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
        theta: s0.theta + w * (k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta),
        v: s0.v + w * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
        delta: s0.delta + w * (k1.delta + 2.0 * k2.delta + 2.0 * k3.delta + k4.delta),
    };
    let v = next.v.max(0.0);
    VehicleState {
        x: next.x,
        y: next.y,
        theta: wrap_angle(next.theta),
        v,
        a: (v - state.v) / dt,
        delta: next.delta.clamp(-params.max_steer, params.max_steer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn straight_line_equilibrium() {
        let p = params();
        let s = VehicleState {
            v: 1.0,
            ..Default::default()
        };
        let inputs = PlantInputs {
            delta_cmd: 0.0,
            accel_cmd: p.drag_coeff,
        };
        let dt = 0.01;
        let n = step_dynamics(&s, &inputs, &p, dt);
        assert_eq!(n.v, 1.0);
        assert!((n.x - dt).abs() < 1e-15);
        assert_eq!(n.y, 0.0);
    }

    #[test]
    fn braking_at_rest_does_not_reverse() {
        let p = params();
        let s = VehicleState::default();
        let n = step_dynamics(
            &s,
            &PlantInputs {
                delta_cmd: 0.0,
                accel_cmd: -1.0,
            },
            &p,
            0.01,
        );
        assert_eq!(n.v, 0.0);
        assert_eq!(n.x, 0.0);
    }

    #[test]
    fn steady_turn_matches_analytic_radius() {
        let p = params();
        let delta = 0.1;
        let radius = p.wheelbase / f64::tan(delta);
        assert!((radius - 1.5947).abs() < 1e-4);
        let v = 0.5;
        let mut s = VehicleState {
            v,
            delta,
            ..Default::default()
        };
        let inputs = PlantInputs {
            delta_cmd: delta,
            accel_cmd: p.drag_coeff * v,
        };
        // centre of the left-turn circle starting at the origin heading +x
        let (cx, cy) = (0.0, radius);
        let dt = 0.01;
        let steps = (2.0 * PI * radius / v / dt).ceil() as usize;
        let mut worst: f64 = 0.0;
        for _ in 0..steps {
            s = step_dynamics(&s, &inputs, &p, dt);
            let r = (s.x - cx).hypot(s.y - cy);
            worst = worst.max((r - radius).abs() / radius);
        }
        assert!(worst < 0.005, "radius deviation {worst}");
    }

    #[test]
    fn coast_down_is_monotone() {
        let p = params();
        let mut s = VehicleState {
            v: 0.8,
            ..Default::default()
        };
        let coast = PlantInputs::default();
        let mut prev = s.v;
        for _ in 0..2000 {
            s = step_dynamics(&s, &coast, &p, 0.01);
            assert!(s.v <= prev);
            assert!(s.v >= 0.0);
            prev = s.v;
        }
        assert!(s.v < 0.8 * (-0.5f64 * 20.0).exp() * 1.01);
    }

    fn integrate(dt: f64, t_end: f64) -> VehicleState {
        let p = params();
        let mut s = VehicleState {
            v: 0.6,
            delta: 0.0,
            ..Default::default()
        };
        let inputs = PlantInputs {
            delta_cmd: 0.4,
            accel_cmd: 0.7,
        };
        let n = (t_end / dt).round() as usize;
        for _ in 0..n {
            s = step_dynamics(&s, &inputs, &p, dt);
        }
        s
    }

    #[test]
    fn rk4_convergence_order() {
        let t_end = 0.4;
        let reference = integrate(0.1 / 8.0, t_end);
        let err = |s: VehicleState| (s.x - reference.x).hypot(s.y - reference.y) + (s.theta - reference.theta).abs();
        let coarse = err(integrate(0.1, t_end));
        let fine = err(integrate(0.05, t_end));
        assert!(coarse / fine >= 8.0, "ratio {}", coarse / fine);
        let order = (coarse / fine).log2();
        assert!(order >= 3.0, "observed order {order}");
    }
}
