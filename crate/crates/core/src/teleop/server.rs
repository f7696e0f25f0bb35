use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use std::io;
use std::net::SocketAddr;
use std::time::Duration;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinSet;
use tokio::time::{interval, Interval, MissedTickBehavior};

use super::protocol::{ProtocolError, MAX_LINE_BYTES};
use super::session::{default_map, Connection, ServiceConfig};

/// One framed inbound unit, before decoding.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Line(Vec<u8>),
    TooLong,
}

/// Read one newline-terminated line, discarding the rest of any line
/// longer than the protocol limit. `None` at end of stream.
pub async fn read_line_capped<R: AsyncBufRead + Unpin>(r: &mut R) -> io::Result<Option<Inbound>> {
    let mut buf = Vec::new();
    let mut overflow = false;
    loop {
        let chunk = r.fill_buf().await?;
        if chunk.is_empty() {
            return Ok(match (overflow, buf.is_empty()) {
                (true, _) => Some(Inbound::TooLong),
                (false, true) => None,
                (false, false) => Some(Inbound::Line(buf)),
            });
        }
        let (used, done) = match chunk.iter().position(|b| *b == b'\n') {
            Some(i) => (i + 1, true),
            None => (chunk.len(), false),
        };
        if !overflow {
            buf.extend_from_slice(&chunk[..used]);
            if buf.len() > MAX_LINE_BYTES + 2 {
                overflow = true;
                buf = Vec::new();
            }
        }
        r.consume(used);
        if done {
            return Ok(Some(if overflow { Inbound::TooLong } else { Inbound::Line(buf) }));
        }
    }
}

#[derive(Clone)]
struct Shared {
    config: ServiceConfig,
    map_digest: String,
    map_json: String,
    shutdown: watch::Receiver<bool>,
}

async fn next_tick(clock: &mut Option<Interval>) {
    match clock.as_mut() {
        Some(c) => {
            c.tick().await;
        }
        None => std::future::pending().await,
    }
}

/// Run one client connection: decode inbound lines, step the session in
/// real time and queue outbound lines. Returns when the client leaves,
/// errs too often, or the server shuts down; any active session is saved.
async fn drive(shared: Shared, mut inbound: mpsc::Receiver<Inbound>, outbound: mpsc::Sender<String>) {
    let mut conn = Connection::new(shared.config.clone(), shared.map_digest.clone());
    let mut shutdown = shared.shutdown.clone();
    let mut clock: Option<Interval> = None;
    loop {
        let (out, mut disconnect) = tokio::select! {
            item = inbound.recv() => match item {
                None => break,
                Some(Inbound::Line(bytes)) => {
                    let reply = conn.handle_line(&bytes);
                    (reply.messages, reply.disconnect)
                }
                Some(Inbound::TooLong) => {
                    let reply = conn.handle(Err(ProtocolError::TooLong));
                    (reply.messages, reply.disconnect)
                }
            },
            _ = next_tick(&mut clock) => (conn.tick(), false),
            _ = shutdown.changed() => break,
        };
        match (conn.physics_dt(), clock.is_some()) {
            (Some(dt), false) => {
                let mut c = interval(Duration::from_secs_f64(dt));
                c.set_missed_tick_behavior(MissedTickBehavior::Burst);
                clock = Some(c);
            }
            (None, true) => clock = None,
            _ => {}
        }
        for m in out {
            if outbound.send(m.encode()).await.is_err() {
                disconnect = true;
            }
        }
        if disconnect {
            break;
        }
    }
    if let Some(m) = conn.close() {
        let _ = outbound.send(m.encode()).await;
    }
}

async fn serve_tcp_client(shared: Shared, stream: TcpStream) {
    let (read, mut write) = stream.into_split();
    let (in_tx, in_rx) = mpsc::channel(256);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(1024);
    let reader = tokio::spawn(async move {
        let mut r = BufReader::new(read);
        while let Ok(Some(item)) = read_line_capped(&mut r).await {
            if in_tx.send(item).await.is_err() {
                break;
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(line) = out_rx.recv().await {
            if write.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
        let _ = write.shutdown().await;
    });
    drive(shared, in_rx, out_tx).await;
    reader.abort();
    let _ = writer.await;
}

async fn ws_upgrade(State(shared): State<Shared>, ws: WebSocketUpgrade) -> impl IntoResponse {
    ws.on_upgrade(move |socket| serve_ws_client(shared, socket))
}

async fn map_route(State(shared): State<Shared>) -> impl IntoResponse {
    ([("content-type", "application/json")], shared.map_json.clone())
}

async fn serve_ws_client(shared: Shared, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (in_tx, in_rx) = mpsc::channel(256);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(1024);
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            let item = match msg {
                WsMessage::Text(t) => Inbound::Line(t.as_str().as_bytes().to_vec()),
                WsMessage::Binary(b) => Inbound::Line(b.to_vec()),
                WsMessage::Close(_) => break,
                _ => continue,
            };
            let item = match item {
                Inbound::Line(b) if b.len() > MAX_LINE_BYTES + 2 => Inbound::TooLong,
                other => other,
            };
            if in_tx.send(item).await.is_err() {
                break;
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(line) = out_rx.recv().await {
            if sink.send(WsMessage::Text(line.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    drive(shared, in_rx, out_tx).await;
    reader.abort();
    let _ = writer.await;
}

/// A running service. Dropping the handle does not stop it; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    pub tcp_addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    stop: watch::Sender<bool>,
    tasks: JoinSet<()>,
}

impl ServerHandle {
    /// Stop accepting, end every session (saving its log) and wait.
    pub async fn shutdown(mut self) {
        let _ = self.stop.send(true);
        while self.tasks.join_next().await.is_some() {}
    }
}

/// Bind the TCP (and optional WebSocket) listeners and start serving.
pub async fn start_server(config: ServiceConfig) -> io::Result<ServerHandle> {
    config
        .validate()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let map = default_map();
    let (stop, shutdown) = watch::channel(false);
    let shared = Shared {
        map_digest: map.digest(),
        map_json: crate::canon::to_pretty(&map).expect("map serializes"),
        config: config.clone(),
        shutdown,
    };
    let mut tasks = JoinSet::new();

    let tcp = TcpListener::bind(&config.listen).await?;
    let tcp_addr = tcp.local_addr()?;
    let s = shared.clone();
    tasks.spawn(async move {
        let mut stop = s.shutdown.clone();
        let mut clients = JoinSet::new();
        loop {
            tokio::select! {
                accepted = tcp.accept() => match accepted {
                    Ok((stream, peer)) => {
                        tracing::info!(%peer, "tcp client connected");
                        clients.spawn(serve_tcp_client(s.clone(), stream));
                    }
                    Err(e) => tracing::warn!("accept failed: {e}"),
                },
                _ = stop.changed() => break,
            }
        }
        while clients.join_next().await.is_some() {}
    });

    let ws_addr = match &config.ws_listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).await?;
            let local = listener.local_addr()?;
            let app = Router::new()
                .route("/ws", get(ws_upgrade))
                .route("/map", get(map_route))
                .with_state(shared.clone());
            let mut stop = shared.shutdown.clone();
            tasks.spawn(async move {
                let graceful = async move {
                    let _ = stop.changed().await;
                };
                if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(graceful).await {
                    tracing::warn!("websocket server stopped: {e}");
                }
            });
            Some(local)
        }
        None => None,
    };

    Ok(ServerHandle {
        tcp_addr,
        ws_addr,
        stop,
        tasks,
    })
}
