//! Session recording and replay, driving-style metrics, cross-backend
//! comparison and profile fitting.

mod compare;
mod fit;
mod io;
mod metrics;
mod record;
mod replay;

pub use compare::{
    compare_sessions, compare_sessions_with, ks_statistic, trajectory_rmse, ComparisonReport, MetricDelta,
    RESAMPLE_STEP,
};
pub use fit::{fit_profile, metric_loss, route_from_log, with_params, FitCandidate, FitGrid, FitResult, MISSING_METRIC_PENALTY};
pub use metrics::{
    aggressiveness_index, along_distance, compute_metrics, compute_metrics_with, leader_gap, percentile, Baseline,
    MetricStats, StyleMetrics, HEADWAY_MIN_SPEED, HEADWAY_RANGE, INDEX_TERMS, JERK_TAU, METRIC_NAMES, STD_FLOOR,
};
pub use replay::{first_mismatch, regenerate, verify_session, Mismatch};
pub use io::{
    events_text, list_sessions, parse_events, parse_telemetry, read_header, read_log, read_log_ref, resolve_session,
    session_file, telemetry_csv, write_log, EVENTS_EXT, HEADER_EXT, SCENARIO_EXT, TELEMETRY_EXT,
};
pub use record::{
    format_utc, session_id_for, SessionHeader, SessionLog, TelemetryRecord, VehicleEntry, COLUMNS,
    HEADLESS_CREATED_AT,
};

use thiserror::Error;

use crate::sim::SimError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TelemetryError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("digest mismatch: expected {expected}, found {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("log has no records for the subject")]
    EmptyLog,
    #[error("route mismatch: {0}")]
    RouteMismatch(String),
    #[error("empty candidate grid for {0}")]
    EmptyGrid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<std::io::Error> for TelemetryError {
    fn from(e: std::io::Error) -> Self {
        TelemetryError::Io(e.to_string())
    }
}

impl From<csv::Error> for TelemetryError {
    fn from(e: csv::Error) -> Self {
        TelemetryError::Schema(e.to_string())
    }
}
