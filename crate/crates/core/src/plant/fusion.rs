use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::sensors::{OverheadPose, SensorFrame};
use super::{PlantError, VehicleParams};
use crate::map::geometry::wrap_angle;

/// Weight on the IMU-propagated speed in the complementary blend.
pub const ALPHA: f64 = 0.9;
/// Disagreement between encoder and camera speed above which the camera wins.
pub const ARBITER_THRESHOLD: f64 = 0.2;
const ACCEL_TAU: f64 = 0.1;
/// A camera speed older than this is not trusted as arbiter.
const CAMERA_STALE_AFTER: f64 = 0.25;
const HISTORY_SPAN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedEstimate {
    pub v_hat: f64,
    pub a_hat: f64,
    /// Encoder speed after arbitration.
    pub v_enc: f64,
}

#[derive(Debug, Clone, Copy)]
struct Motion {
    t: f64,
    v: f64,
    yaw_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub t: f64,
}

/// Online complementary filter over a stream of sensor frames, plus a pose
/// estimate that re-anchors on each camera frame and dead-reckons forward.
#[derive(Debug, Clone, Default)]
pub struct FusionFilter {
    last: Option<(f64, FusedEstimate)>,
    poses: VecDeque<OverheadPose>,
    camera_v: Option<(f64, f64)>,
    motion: VecDeque<Motion>,
    pose: Option<PoseEstimate>,
}

impl FusionFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn estimate(&self) -> Option<FusedEstimate> {
        self.last.map(|(_, e)| e)
    }

    pub fn update(&mut self, frame: &SensorFrame, params: &VehicleParams) -> FusedEstimate {
        let mut v_enc = frame.encoder_ticks as f64 / frame.window * params.metres_per_tick();

        if let Some(pose) = frame.overhead_pose {
            self.poses.push_back(pose);
            while self.poses.len() > 3 {
                self.poses.pop_front();
            }
            // a pair spanning two camera frames
            if self.poses.len() == 3 {
                let (a, b) = (self.poses[0], self.poses[2]);
                let span = b.t_capture - a.t_capture;
                if span > 0.0 {
                    self.camera_v = Some((frame.t, (b.x - a.x).hypot(b.y - a.y) / span));
                }
            }
        }
        if let Some((received, v_cam)) = self.camera_v {
            if frame.t - received <= CAMERA_STALE_AFTER && (v_cam - v_enc).abs() > ARBITER_THRESHOLD {
                v_enc = v_cam;
            }
        }

        let est = match self.last {
            None => FusedEstimate {
                v_hat: v_enc,
                a_hat: frame.imu_ax,
                v_enc,
            },
            Some((t_prev, prev)) => {
                let dt = (frame.t - t_prev).max(0.0);
                let v_hat = (ALPHA * (prev.v_hat + frame.imu_ax * dt) + (1.0 - ALPHA) * v_enc).max(0.0);
                let k = 1.0 - (-dt / ACCEL_TAU).exp();
                FusedEstimate {
                    v_hat,
                    a_hat: prev.a_hat + k * (frame.imu_ax - prev.a_hat),
                    v_enc,
                }
            }
        };
        self.last = Some((frame.t, est));
        self.track_pose(frame, est.v_hat);
        est
    }

    fn track_pose(&mut self, frame: &SensorFrame, v_hat: f64) {
        self.motion.push_back(Motion {
            t: frame.t,
            v: v_hat,
            yaw_rate: frame.imu_yaw_rate,
        });
        while self.motion.front().is_some_and(|m| frame.t - m.t > HISTORY_SPAN) {
            self.motion.pop_front();
        }
        if let Some(cam) = frame.overhead_pose {
            // re-anchor at the capture and replay buffered motion up to now
            let mut p = PoseEstimate {
                x: cam.x,
                y: cam.y,
                theta: cam.theta,
                t: cam.t_capture,
            };
            for w in self.motion.iter().filter(|m| m.t > cam.t_capture) {
                p = propagate(p, w.v, w.yaw_rate, w.t);
            }
            self.pose = Some(p);
        } else if let Some(p) = self.pose {
            self.pose = Some(propagate(p, v_hat, frame.imu_yaw_rate, frame.t));
        }
    }

    /// Pose estimate extrapolated to `t`, if a camera frame has been seen.
    pub fn pose_at(&self, t: f64) -> Option<PoseEstimate> {
        let p = self.pose?;
        let (v, w) = match (self.last, self.motion.back()) {
            (Some((_, e)), Some(m)) => (e.v_hat, m.yaw_rate),
            _ => (0.0, 0.0),
        };
        Some(propagate(p, v, w, t))
    }
}

fn propagate(p: PoseEstimate, v: f64, yaw_rate: f64, t: f64) -> PoseEstimate {
    let dt = t - p.t;
    if dt <= 0.0 {
        return p;
    }
    let mid = p.theta + 0.5 * yaw_rate * dt;
    PoseEstimate {
        x: p.x + v * dt * mid.cos(),
        y: p.y + v * dt * mid.sin(),
        theta: wrap_angle(p.theta + yaw_rate * dt),
        t,
    }
}

/// Batch form of [`FusionFilter`]: run the filter over a time-ordered
/// history and return the final estimate.
pub fn fuse_estimate(frames: &[SensorFrame], params: &VehicleParams) -> Result<FusedEstimate, PlantError> {
    let mut f = FusionFilter::new();
    let mut out = None;
    for frame in frames {
        out = Some(f.update(frame, params));
    }
    out.ok_or(PlantError::InsufficientData)
}
