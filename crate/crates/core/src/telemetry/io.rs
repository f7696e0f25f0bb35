use std::fs;
use std::path::{Path, PathBuf};

use super::record::{SessionHeader, SessionLog, TelemetryRecord, COLUMNS};
use super::TelemetryError;
use crate::canon::{self, fmt_real, quantize};
use crate::sim::EventRecord;
use crate::traffic::Phase;

pub const HEADER_EXT: &str = "header";
pub const TELEMETRY_EXT: &str = "telemetry.csv";
pub const EVENTS_EXT: &str = "events";
pub const SCENARIO_EXT: &str = "scenario";

pub fn session_file(dir: &Path, session_id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{session_id}.{ext}"))
}

fn phase_str(p: Option<Phase>) -> &'static str {
    p.map_or("none", |p| p.as_str())
}

fn parse_phase(s: &str) -> Result<Option<Phase>, TelemetryError> {
    match s {
        "none" => Ok(None),
        "green" => Ok(Some(Phase::Green)),
        "amber" => Ok(Some(Phase::Amber)),
        "red" => Ok(Some(Phase::Red)),
        other => Err(TelemetryError::Schema(format!("unknown light phase {other:?}"))),
    }
}

pub fn telemetry_csv(records: &[TelemetryRecord]) -> Result<Vec<u8>, TelemetryError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in records {
        w.write_record([
            r.tick.to_string(),
            fmt_real(r.sim_t),
            r.vehicle_id.clone(),
            fmt_real(r.x),
            fmt_real(r.y),
            fmt_real(r.theta),
            fmt_real(r.v),
            fmt_real(r.a),
            fmt_real(r.steer_cmd),
            fmt_real(r.throttle_cmd),
            fmt_real(r.brake_cmd),
            fmt_real(r.encoder_v),
            fmt_real(r.fused_v),
            fmt_real(r.fused_a),
            r.lane_id.clone(),
            fmt_real(r.s),
            fmt_real(r.lateral_offset),
            phase_str(r.light_ahead).to_string(),
            fmt_real(r.current_limit),
        ])?;
    }
    w.into_inner().map_err(|e| TelemetryError::Io(e.to_string()))
}

pub fn events_text(events: &[EventRecord]) -> Result<String, TelemetryError> {
    let mut out = String::new();
    for e in events {
        out.push_str(&canon::to_line(e).map_err(|e| TelemetryError::Schema(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Write the header / telemetry / events triplet into `dir`. Returns the
/// session id.
pub fn write_log(dir: &Path, log: &SessionLog) -> Result<String, TelemetryError> {
    check_sorted(&log.records)?;
    fs::create_dir_all(dir)?;
    let id = &log.header.session_id;
    let header = canon::to_pretty(&log.header).map_err(|e| TelemetryError::Schema(e.to_string()))?;
    fs::write(session_file(dir, id, HEADER_EXT), header)?;
    fs::write(session_file(dir, id, TELEMETRY_EXT), telemetry_csv(&log.records)?)?;
    fs::write(session_file(dir, id, EVENTS_EXT), events_text(&log.events)?)?;
    Ok(id.clone())
}

fn field(rec: &csv::StringRecord, i: usize, line: u64) -> Result<&str, TelemetryError> {
    rec.get(i)
        .ok_or_else(|| TelemetryError::Schema(format!("row {line}: missing column {}", COLUMNS[i])))
}

fn real(rec: &csv::StringRecord, i: usize, line: u64) -> Result<f64, TelemetryError> {
    let raw = field(rec, i, line)?;
    let v: f64 = raw
        .parse()
        .map_err(|_| TelemetryError::Schema(format!("row {line}: {} is not a number: {raw:?}", COLUMNS[i])))?;
    Ok(v)
}

pub fn parse_telemetry(bytes: &[u8]) -> Result<Vec<TelemetryRecord>, TelemetryError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = r.headers()?.clone();
    if headers.iter().ne(COLUMNS.iter().copied()) {
        return Err(TelemetryError::Schema(format!(
            "column mismatch: expected {}, found {}",
            COLUMNS.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i as u64 + 2;
        if row.len() != COLUMNS.len() {
            return Err(TelemetryError::Schema(format!("row {line}: expected {} fields", COLUMNS.len())));
        }
        let tick = field(&row, 0, line)?
            .parse()
            .map_err(|_| TelemetryError::Schema(format!("row {line}: bad tick")))?;
        out.push(TelemetryRecord {
            tick,
            sim_t: real(&row, 1, line)?,
            vehicle_id: field(&row, 2, line)?.to_string(),
            x: real(&row, 3, line)?,
            y: real(&row, 4, line)?,
            theta: real(&row, 5, line)?,
            v: real(&row, 6, line)?,
            a: real(&row, 7, line)?,
            steer_cmd: real(&row, 8, line)?,
            throttle_cmd: real(&row, 9, line)?,
            brake_cmd: real(&row, 10, line)?,
            encoder_v: real(&row, 11, line)?,
            fused_v: real(&row, 12, line)?,
            fused_a: real(&row, 13, line)?,
            lane_id: field(&row, 14, line)?.to_string(),
            s: real(&row, 15, line)?,
            lateral_offset: real(&row, 16, line)?,
            light_ahead: parse_phase(field(&row, 17, line)?)?,
            current_limit: real(&row, 18, line)?,
        });
    }
    Ok(out)
}

fn check_sorted(records: &[TelemetryRecord]) -> Result<(), TelemetryError> {
    for (i, w) in records.windows(2).enumerate() {
        let a = (w[0].tick, &w[0].vehicle_id);
        let b = (w[1].tick, &w[1].vehicle_id);
        if a >= b {
            return Err(TelemetryError::Schema(format!(
                "records not sorted by (tick, vehicle_id) at row {}",
                i + 3
            )));
        }
    }
    Ok(())
}

/// Full-rate check: every tick from 0 is present with the same vehicle set
/// and `sim_t = tick * dt`.
fn check_full_rate(records: &[TelemetryRecord], dt: f64) -> Result<(), TelemetryError> {
    let Some(first) = records.first() else {
        return Ok(());
    };
    if first.tick != 0 {
        return Err(TelemetryError::Schema("records must start at tick 0".into()));
    }
    let fleet: Vec<&str> = records
        .iter()
        .take_while(|r| r.tick == 0)
        .map(|r| r.vehicle_id.as_str())
        .collect();
    for (i, r) in records.iter().enumerate() {
        let expected_tick = (i / fleet.len()) as u64;
        if r.tick != expected_tick || r.vehicle_id != fleet[i % fleet.len()] {
            return Err(TelemetryError::Schema(format!(
                "row {}: expected tick {expected_tick} for {} (decimated or incomplete log)",
                i + 2,
                fleet[i % fleet.len()]
            )));
        }
        if r.sim_t != quantize(r.tick as f64 * dt) {
            return Err(TelemetryError::Schema(format!("row {}: sim_t inconsistent with tick", i + 2)));
        }
    }
    if !records.len().is_multiple_of(fleet.len()) {
        return Err(TelemetryError::Schema("last tick is incomplete".into()));
    }
    Ok(())
}

pub fn parse_events(text: &str) -> Result<Vec<EventRecord>, TelemetryError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TelemetryError::Schema(format!("events line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_header(dir: &Path, session_id: &str) -> Result<SessionHeader, TelemetryError> {
    let text = fs::read_to_string(session_file(dir, session_id, HEADER_EXT))?;
    serde_json::from_str(&text).map_err(|e| TelemetryError::Schema(format!("header: {e}")))
}

pub fn read_log(dir: &Path, session_id: &str) -> Result<SessionLog, TelemetryError> {
    let header = read_header(dir, session_id)?;
    let records = parse_telemetry(&fs::read(session_file(dir, session_id, TELEMETRY_EXT))?)?;
    check_sorted(&records)?;
    check_full_rate(&records, header.physics_dt)?;
    let events = parse_events(&fs::read_to_string(session_file(dir, session_id, EVENTS_EXT))?)?;
    Ok(SessionLog {
        header,
        records,
        events,
    })
}

/// Session ids present in a directory (by their header files), sorted.
pub fn list_sessions(dir: &Path) -> Result<Vec<String>, TelemetryError> {
    let suffix = format!(".{HEADER_EXT}");
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(&suffix).map(String::from)))
        .collect();
    ids.sort();
    Ok(ids)
}

/// Resolve a session reference: a directory holding exactly one session,
/// or a path prefix `<dir>/<session_id>` (any of the triplet files also
/// works).
pub fn resolve_session(reference: &Path) -> Result<(PathBuf, String), TelemetryError> {
    if reference.is_dir() {
        let ids = list_sessions(reference)?;
        return match ids.as_slice() {
            [one] => Ok((reference.to_path_buf(), one.clone())),
            [] => Err(TelemetryError::Schema(format!("no session in {}", reference.display()))),
            _ => Err(TelemetryError::Schema(format!(
                "{} holds {} sessions; name one explicitly",
                reference.display(),
                ids.len()
            ))),
        };
    }
    let dir = reference.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    let name = reference
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| TelemetryError::Schema(format!("bad session path {}", reference.display())))?;
    let mut id = name;
    for ext in [TELEMETRY_EXT, HEADER_EXT, EVENTS_EXT, SCENARIO_EXT] {
        if let Some(stripped) = name.strip_suffix(&format!(".{ext}")) {
            id = stripped;
            break;
        }
    }
    if !session_file(&dir, id, HEADER_EXT).exists() {
        return Err(TelemetryError::Io(format!("no session header for {}", reference.display())));
    }
    Ok((dir, id.to_string()))
}

pub fn read_log_ref(reference: &Path) -> Result<SessionLog, TelemetryError> {
    let (dir, id) = resolve_session(reference)?;
    read_log(&dir, &id)
}
