use serde::{Deserialize, Serialize};

use crate::canon::quantize;
use crate::plant::VehicleParams;
use crate::sim::{BackendDescriptor, EventRecord};
use crate::traffic::Phase;

/// One row of the synchronized per-tick telemetry stream. Reals are
/// quantized to the six-decimal grid at construction so the CSV form
/// round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub tick: u64,
    pub sim_t: f64,
    pub vehicle_id: String,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub a: f64,
    pub steer_cmd: f64,
    pub throttle_cmd: f64,
    pub brake_cmd: f64,
    pub encoder_v: f64,
    pub fused_v: f64,
    pub fused_a: f64,
    /// Empty when the vehicle is off the road.
    pub lane_id: String,
    pub s: f64,
    pub lateral_offset: f64,
    pub light_ahead: Option<Phase>,
    pub current_limit: f64,
}

pub const COLUMNS: [&str; 19] = [
    "tick",
    "sim_t",
    "vehicle_id",
    "x",
    "y",
    "theta",
    "v",
    "a",
    "steer_cmd",
    "throttle_cmd",
    "brake_cmd",
    "encoder_v",
    "fused_v",
    "fused_a",
    "lane_id",
    "s",
    "lateral_offset",
    "light_ahead",
    "current_limit",
];

impl TelemetryRecord {
    pub fn quantized(mut self) -> Self {
        for f in [
            &mut self.sim_t,
            &mut self.x,
            &mut self.y,
            &mut self.theta,
            &mut self.v,
            &mut self.a,
            &mut self.steer_cmd,
            &mut self.throttle_cmd,
            &mut self.brake_cmd,
            &mut self.encoder_v,
            &mut self.fused_v,
            &mut self.fused_a,
            &mut self.s,
            &mut self.lateral_offset,
            &mut self.current_limit,
        ] {
            *f = quantize(*f);
        }
        self
    }

    pub fn on_road(&self) -> bool {
        !self.lane_id.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleEntry {
    pub vehicle_id: String,
    pub params: VehicleParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionHeader {
    pub session_id: String,
    pub scenario_name: String,
    pub scenario_digest: String,
    pub map_digest: String,
    pub seed: u64,
    pub backend: BackendDescriptor,
    pub driver_label: String,
    pub order_index: u32,
    pub physics_dt: f64,
    pub created_at: String,
    pub subject: String,
    pub vehicles: Vec<VehicleEntry>,
}

impl SessionHeader {
    pub fn params_of(&self, vehicle_id: &str) -> Option<&VehicleParams> {
        self.vehicles
            .iter()
            .find(|v| v.vehicle_id == vehicle_id)
            .map(|v| &v.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub records: Vec<TelemetryRecord>,
    pub events: Vec<EventRecord>,
}

impl SessionLog {
    pub fn vehicle_records<'a>(&'a self, vehicle_id: &'a str) -> impl Iterator<Item = &'a TelemetryRecord> + 'a {
        self.records.iter().filter(move |r| r.vehicle_id == vehicle_id)
    }

    /// Number of distinct ticks recorded.
    pub fn tick_count(&self) -> u64 {
        self.records.last().map_or(0, |r| r.tick + 1)
    }
}

/// Deterministic session id: a digest of the scenario digest and seed.
pub fn session_id_for(scenario_digest: &str, seed: u64) -> String {
    crate::canon::digest64(format!("{scenario_digest}:{seed}").as_bytes())
}

/// Timestamp used for headless runs so their output is a pure function of
/// the scenario.
pub const HEADLESS_CREATED_AT: &str = "1970-01-01T00:00:00Z";

/// RFC 3339 UTC rendering of a unix timestamp in whole seconds.
pub fn format_utc(unix_secs: u64) -> String {
    let days = (unix_secs / 86_400) as i64;
    let rem = unix_secs % 86_400;
    // civil-from-days (proleptic Gregorian)
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utc_formatting() {
        assert_eq!(format_utc(0), HEADLESS_CREATED_AT);
        assert_eq!(format_utc(951_782_400), "2000-02-29T00:00:00Z");
        assert_eq!(format_utc(1_700_000_000), "2023-11-14T22:13:20Z");
    }

    #[test]
    fn session_ids_depend_on_seed() {
        assert_ne!(session_id_for("abc", 1), session_id_for("abc", 2));
        assert_eq!(session_id_for("abc", 1).len(), 16);
    }
}
