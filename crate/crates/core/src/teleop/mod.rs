//! Teleoperation service: link model, wire protocol, per-connection
//! sessions and the TCP / WebSocket servers.

mod channel;
mod protocol;
mod server;
mod session;

pub use channel::{
    apply_channel, Channel, ChannelModel, ControlInbox, LinkDirection, FAILSAFE_BRAKE, FAILSAFE_TIMEOUT,
};
pub use protocol::{
    decode_bytes, decode_message, BackendName, ClientMessage, Decoded, EgoView, Hud, LightView, OtherView,
    ProtocolError, ServerMessage, MAX_LINE_BYTES, PROTOCOL_VERSION,
};
pub use server::{read_line_capped, start_server, Inbound, ServerHandle};
pub use session::{
    default_map, fresh_identity, resolve_scenario_ref, Connection, Reply, ServiceConfig, Session, SessionError,
    SessionRequest, BUILTIN_PREFIX, MAX_CONSECUTIVE_ERRORS, NEARBY_RADIUS,
};
