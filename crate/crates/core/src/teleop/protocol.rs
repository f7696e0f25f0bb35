use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::plant::ActuatorCommand;
use crate::telemetry::StyleMetrics;
use crate::traffic::Phase;

pub const PROTOCOL_VERSION: u32 = 1;
/// Longest accepted inbound line, excluding the terminator.
pub const MAX_LINE_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("line exceeds {MAX_LINE_BYTES} bytes")]
    TooLong,
    #[error("line is not valid UTF-8")]
    NotUtf8,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("missing field {0:?}")]
    MissingField(String),
    #[error("unexpected field {0:?}")]
    UnknownField(String),
}

impl ProtocolError {
    /// Short code carried in `error` replies.
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::TooLong => "too_long",
            ProtocolError::NotUtf8 => "encoding",
            ProtocolError::Malformed(_) => "malformed",
            ProtocolError::UnknownType(_) => "unknown_type",
            ProtocolError::MissingField(_) => "missing_field",
            ProtocolError::UnknownField(_) => "unknown_field",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    Sim,
    MockPhysical,
}

/// Messages a driving client sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        client_kind: String,
        protocol_version: u32,
    },
    StartSession {
        scenario_ref: String,
        vehicle_id: String,
        backend: BackendName,
        #[serde(default)]
        driver_label: String,
        #[serde(default)]
        order_index: u32,
    },
    Control {
        steer: f64,
        throttle: f64,
        brake: f64,
        seq: u64,
        t: f64,
    },
    StopSession {},
    Ping {
        nonce: u64,
    },
}

const CLIENT_TYPES: [&str; 5] = ["hello", "start_session", "control", "stop_session", "ping"];

/// A decoded inbound line. `clamped` is set when control values were
/// pulled into range.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub message: ClientMessage,
    pub clamped: bool,
}

impl ClientMessage {
    pub fn encode(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }

    /// Control values as an actuator command (already clamped after decode).
    pub fn command(&self) -> Option<ActuatorCommand> {
        match self {
            ClientMessage::Control {
                steer, throttle, brake, ..
            } => Some(ActuatorCommand::new(*steer, *throttle, *brake)),
            _ => None,
        }
    }
}

/// Decode one inbound line with strict field checking. A trailing `\n` or
/// `\r\n` is ignored.
pub fn decode_message(line: &str) -> Result<Decoded, ProtocolError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.len() > MAX_LINE_BYTES {
        return Err(ProtocolError::TooLong);
    }
    if line.contains('\n') {
        return Err(ProtocolError::Malformed("embedded newline".into()));
    }
    let value: Value = serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ProtocolError::Malformed("expected an object".into()));
    };
    let kind = match obj.get("type") {
        Some(Value::String(k)) => k.clone(),
        Some(_) => return Err(ProtocolError::Malformed("type must be a string".into())),
        None => return Err(ProtocolError::MissingField("type".into())),
    };
    if !CLIENT_TYPES.contains(&kind.as_str()) {
        return Err(ProtocolError::UnknownType(kind));
    }
    let message: ClientMessage = serde_json::from_value(Value::Object(obj)).map_err(classify)?;
    Ok(match message {
        ClientMessage::Control {
            steer,
            throttle,
            brake,
            seq,
            t,
        } => {
            let (cmd, clamped) = ActuatorCommand::new_checked(steer, throttle, brake);
            Decoded {
                message: ClientMessage::Control {
                    steer: cmd.steer,
                    throttle: cmd.throttle,
                    brake: cmd.brake,
                    seq,
                    t,
                },
                clamped,
            }
        }
        other => Decoded {
            message: other,
            clamped: false,
        },
    })
}

/// Decode raw bytes from a stream transport.
pub fn decode_bytes(line: &[u8]) -> Result<Decoded, ProtocolError> {
    if line.len() > MAX_LINE_BYTES + 2 {
        return Err(ProtocolError::TooLong);
    }
    decode_message(std::str::from_utf8(line).map_err(|_| ProtocolError::NotUtf8)?)
}

fn classify(e: serde_json::Error) -> ProtocolError {
    let msg = e.to_string();
    let quoted = || msg.split('`').nth(1).unwrap_or_default().to_string();
    if msg.starts_with("missing field") {
        ProtocolError::MissingField(quoted())
    } else if msg.starts_with("unknown field") {
        ProtocolError::UnknownField(quoted())
    } else {
        ProtocolError::Malformed(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoView {
    pub vehicle_id: String,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtherView {
    pub vehicle_id: String,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightView {
    pub light_id: String,
    pub phase: Phase,
    pub time_to_change: f64,
    pub distance_to_stop_line: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hud {
    pub current_limit: f64,
    /// Empty while off the road.
    pub lane_id: String,
    pub speed: f64,
    pub failsafe: bool,
}

/// Messages the service sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    Welcome {
        physics_rate: f64,
        state_rate: f64,
        map_digest: String,
    },
    SessionStarted {
        session_id: String,
    },
    State {
        tick: u64,
        sim_t: f64,
        ego: EgoView,
        others: Vec<OtherView>,
        lights: Vec<LightView>,
        hud: Hud,
    },
    Event {
        kind: String,
        tick: u64,
        details: Map<String, Value>,
    },
    SessionEnded {
        session_id: String,
        telemetry_path: String,
        metrics_summary: Option<StyleMetrics>,
    },
    Pong {
        nonce: u64,
        server_t: f64,
    },
    Error {
        code: String,
        message: String,
    },
}

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn encode(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }

    pub fn decode(line: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(line.trim_end()).map_err(classify)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_line_decodes() {
        let d = decode_message(r#"{"type":"control","seq":7,"t":1.25,"steer":-0.2,"throttle":0.5,"brake":0}"#).unwrap();
        assert!(!d.clamped);
        assert_eq!(
            d.message,
            ClientMessage::Control {
                steer: -0.2,
                throttle: 0.5,
                brake: 0.0,
                seq: 7,
                t: 1.25
            }
        );
    }

    #[test]
    fn unknown_type_is_rejected() {
        assert_eq!(
            decode_message(r#"{"type":"warp_drive"}"#),
            Err(ProtocolError::UnknownType("warp_drive".into()))
        );
    }

    #[test]
    fn out_of_range_steer_is_clamped_and_flagged() {
        let d = decode_message(r#"{"type":"control","seq":1,"t":0,"steer":1.7,"throttle":0,"brake":0}"#).unwrap();
        assert!(d.clamped);
        assert_eq!(d.message.command().unwrap().steer, 1.0);
    }

    #[test]
    fn strict_fields() {
        assert_eq!(
            decode_message(r#"{"type":"control","seq":1,"t":0,"steer":0,"throttle":0}"#),
            Err(ProtocolError::MissingField("brake".into()))
        );
        assert_eq!(
            decode_message(r#"{"type":"ping","nonce":3,"extra":1}"#),
            Err(ProtocolError::UnknownField("extra".into()))
        );
        assert_eq!(decode_message(r#"{"nonce":3}"#), Err(ProtocolError::MissingField("type".into())));
        assert!(matches!(decode_message("[1,2]"), Err(ProtocolError::Malformed(_))));
        assert!(decode_message(r#"{"type":"stop_session"}"#).is_ok());
    }

    #[test]
    fn length_and_encoding_limits() {
        let long = format!(r#"{{"type":"ping","nonce":1,"pad":"{}"}}"#, "x".repeat(MAX_LINE_BYTES));
        assert_eq!(decode_message(&long), Err(ProtocolError::TooLong));
        assert_eq!(decode_bytes(&[0xff, 0xfe]), Err(ProtocolError::NotUtf8));
    }

    #[test]
    fn messages_round_trip() {
        let msgs = [
            ClientMessage::Hello {
                client_kind: "test".into(),
                protocol_version: 1,
            },
            ClientMessage::StartSession {
                scenario_ref: "builtin:teleop".into(),
                vehicle_id: "ego".into(),
                backend: BackendName::MockPhysical,
                driver_label: "p01".into(),
                order_index: 2,
            },
            ClientMessage::StopSession {},
            ClientMessage::Ping { nonce: 9 },
        ];
        for m in msgs {
            assert_eq!(decode_message(&m.encode()).unwrap().message, m);
        }
        let s = ServerMessage::error("seq", "seq must increase");
        assert_eq!(ServerMessage::decode(&s.encode()).unwrap(), s);
    }
}
