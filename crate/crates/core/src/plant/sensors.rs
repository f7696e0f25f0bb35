use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::{VehicleParams, VehicleState};

/// Sensor noise and timing. Biases are constant offsets; sigmas are
/// per-sample gaussian standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_ax: f64,
    pub sigma_yaw_rate: f64,
    pub sigma_xy: f64,
    pub bias_ax: f64,
    pub bias_yaw_rate: f64,
    pub sensor_window: f64,
    pub camera_period: f64,
    pub camera_latency: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_ax: 0.05,
            sigma_yaw_rate: 0.02,
            sigma_xy: 0.002,
            bias_ax: 0.0,
            bias_yaw_rate: 0.0,
            sensor_window: 0.02,
            camera_period: 1.0 / 30.0,
            camera_latency: 0.05,
        }
    }
}

impl NoiseConfig {
    /// Default timing with every noise and bias term zeroed.
    pub fn off() -> Self {
        Self {
            sigma_ax: 0.0,
            sigma_yaw_rate: 0.0,
            sigma_xy: 0.0,
            bias_ax: 0.0,
            bias_yaw_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma_ax == 0.0
            && self.sigma_yaw_rate == 0.0
            && self.sigma_xy == 0.0
            && self.bias_ax == 0.0
            && self.bias_yaw_rate == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("sigma_ax", self.sigma_ax),
            ("sigma_yaw_rate", self.sigma_yaw_rate),
            ("sigma_xy", self.sigma_xy),
            ("camera_latency", self.camera_latency),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("{name} must be a non-negative number"));
            }
        }
        for (name, v) in [("sensor_window", self.sensor_window), ("camera_period", self.camera_period)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be positive"));
            }
        }
        if !self.bias_ax.is_finite() || !self.bias_yaw_rate.is_finite() {
            return Err("biases must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub t_capture: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: f64,
    pub window: f64,
    pub encoder_ticks: u32,
    pub imu_ax: f64,
    pub imu_yaw_rate: f64,
    pub overhead_pose: Option<OverheadPose>,
}

const TIME_EPS: f64 = 1e-9;

/// Per-vehicle sensor simulator: shaft encoder with a fractional tick
/// accumulator, IMU, and a delayed lower-rate overhead camera.
///
/// Random draws happen in a fixed order (camera x, y at capture; IMU ax,
/// yaw rate at each sample) so a seed fully determines the stream.
#[derive(Debug, Clone)]
pub struct SensorSuite {
    noise: NoiseConfig,
    rng: ChaCha8Rng,
    tick_accumulator: f64,
    next_capture: u64,
    in_flight: VecDeque<(f64, OverheadPose)>,
}

impl SensorSuite {
    pub fn new(noise: NoiseConfig, seed: u64) -> Self {
        Self {
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tick_accumulator: 0.0,
            next_capture: 0,
            in_flight: VecDeque::new(),
        }
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    /// Fractional encoder ticks not yet reported.
    pub fn tick_remainder(&self) -> f64 {
        self.tick_accumulator
    }

    /// Accumulate wheel travel (metres) covered by one physics step.
    pub fn record_motion(&mut self, distance: f64, params: &VehicleParams) {
        self.tick_accumulator += distance.max(0.0) / params.metres_per_tick();
    }

    fn gauss(&mut self, sigma: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        sigma * z
    }

    /// Called every physics tick with the ground-truth state; captures a
    /// camera frame when one is due and queues it behind the latency.
    pub fn observe_state(&mut self, t: f64, state: &VehicleState) {
        let due = self.next_capture as f64 * self.noise.camera_period;
        if t + TIME_EPS < due {
            return;
        }
        let nx = self.gauss(self.noise.sigma_xy);
        let ny = self.gauss(self.noise.sigma_xy);
        let pose = OverheadPose {
            x: state.x + nx,
            y: state.y + ny,
            theta: state.theta,
            t_capture: t,
        };
        self.in_flight.push_back((t + self.noise.camera_latency, pose));
        // skip any capture slots that fell inside this tick
        while self.next_capture as f64 * self.noise.camera_period <= t + TIME_EPS {
            self.next_capture += 1;
        }
    }

    /// Produce the frame for the sensor window ending at `t`.
    pub fn sample(&mut self, state: &VehicleState, params: &VehicleParams, t: f64) -> SensorFrame {
        let ticks = self.tick_accumulator.floor();
        self.tick_accumulator -= ticks;
        let yaw_rate = state.v * state.delta.tan() / params.wheelbase;
        let nax = self.gauss(self.noise.sigma_ax);
        let nyaw = self.gauss(self.noise.sigma_yaw_rate);
        let mut overhead_pose = None;
        while let Some((release, _)) = self.in_flight.front() {
            if *release > t + TIME_EPS {
                break;
            }
            overhead_pose = self.in_flight.pop_front().map(|(_, p)| p);
        }
        SensorFrame {
            t,
            window: self.noise.sensor_window,
            encoder_ticks: ticks as u32,
            imu_ax: state.a + self.noise.bias_ax + nax,
            imu_yaw_rate: yaw_rate + self.noise.bias_yaw_rate + nyaw,
            overhead_pose,
        }
    }
}
