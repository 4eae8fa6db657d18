//! TCP relay: accepts players, seats them in two-party sessions and forwards
//! each player's samples and profiles to the partner.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde_json::Value;
use tokio::io::{AsyncWriteExt, BufReader, BufWriter};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot};
use tokio::task::{JoinHandle, JoinSet};
use tracing::{debug, info, warn};

use super::protocol::{read_line, ErrorCode, Line, PlayerId, WireMessage};
use super::state::{ForwardOutcome, ForwardQueue, PlayerSlot, SessionCounters, SessionState, DEFAULT_QUEUE_CAPACITY};

pub const DEFAULT_RATE_LIMIT: u32 = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayConfig {
    /// Per-player forward queue bound.
    pub queue_capacity: usize,
    /// Samples plus profiles accepted per player per second; `None` disables
    /// the cap.
    pub rate_limit_per_s: Option<u32>,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            rate_limit_per_s: Some(DEFAULT_RATE_LIMIT),
        }
    }
}

/// Shared relay state.
#[derive(Debug)]
pub struct Relay {
    config: RelayConfig,
    sessions: Mutex<HashMap<String, SessionState>>,
    next_conn: AtomicU64,
}

impl Relay {
    pub fn new(config: RelayConfig) -> Self {
        assert!(config.queue_capacity > 0, "queue capacity must be positive");
        Self {
            config,
            sessions: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &RelayConfig {
        &self.config
    }

    pub fn counters(&self, session_id: &str) -> Option<SessionCounters> {
        self.sessions.lock().unwrap().get(session_id).map(|s| s.counters)
    }

    /// Number of sessions with at least one connected player.
    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    fn join(&self, session_id: &str, player: PlayerId, slot: PlayerSlot) -> Result<bool, ErrorCode> {
        let mut sessions = self.sessions.lock().unwrap();
        let session = sessions
            .entry(session_id.to_string())
            .or_insert_with(|| SessionState::new(session_id));
        let result = session.join(player, slot);
        if result.is_err() && session.is_empty() {
            sessions.remove(session_id);
        }
        result
    }

    fn forward(&self, session_id: &str, from: PlayerId, msg: WireMessage) -> ForwardOutcome {
        let mut sessions = self.sessions.lock().unwrap();
        match sessions.get_mut(session_id) {
            Some(s) => s.forward(from, msg),
            None => ForwardOutcome::PartnerAbsent,
        }
    }

    fn disconnect(&self, session_id: &str, player: PlayerId, conn_id: u64) {
        let mut sessions = self.sessions.lock().unwrap();
        if let Some(s) = sessions.get_mut(session_id) {
            s.disconnect(player, conn_id);
            // Profiles are kept while either player remains seated.
            if s.is_empty() {
                sessions.remove(session_id);
            }
        }
    }
}

/// Token bucket refilled continuously at `rate` per second.
struct RateLimiter {
    rate: f64,
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    fn new(rate: u32) -> Self {
        Self {
            rate: f64::from(rate),
            tokens: f64::from(rate),
            last: Instant::now(),
        }
    }

    fn try_take(&mut self) -> bool {
        let now = Instant::now();
        let elapsed = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + elapsed * self.rate).min(self.rate);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            true
        } else {
            false
        }
    }
}

async fn write_message(out: &mut BufWriter<OwnedWriteHalf>, msg: &WireMessage) -> std::io::Result<()> {
    out.write_all(msg.encode().as_bytes()).await
}

/// Drains direct replies first, then the forward queue, until the queue is
/// closed.
async fn write_loop(
    writer: OwnedWriteHalf,
    mut control: mpsc::UnboundedReceiver<WireMessage>,
    queue: Arc<ForwardQueue>,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(writer);
    let mut control_open = true;
    loop {
        let mut wrote = false;
        while let Ok(msg) = control.try_recv() {
            write_message(&mut out, &msg).await?;
            wrote = true;
        }
        if !wrote {
            if let Some(msg) = queue.pop() {
                write_message(&mut out, &msg).await?;
                wrote = true;
            }
        }
        if wrote {
            continue;
        }
        out.flush().await?;
        if queue.is_closed() {
            break;
        }
        if control_open {
            tokio::select! {
                biased;
                msg = control.recv() => match msg {
                    Some(msg) => write_message(&mut out, &msg).await?,
                    None => control_open = false,
                },
                _ = queue.wait() => {}
            }
        } else {
            queue.wait().await;
        }
    }
    out.flush().await?;
    out.into_inner().shutdown().await
}

async fn handle_connection(relay: Arc<Relay>, stream: TcpStream, peer: SocketAddr) {
    let _ = stream.set_nodelay(true);
    let conn_id = relay.next_conn.fetch_add(1, Ordering::Relaxed);
    let (read_half, write_half) = stream.into_split();
    let mut reader = BufReader::new(read_half);
    let (control, control_rx) = mpsc::unbounded_channel();
    let queue = Arc::new(ForwardQueue::new(relay.config.queue_capacity));
    let writer = tokio::spawn(write_loop(write_half, control_rx, queue.clone()));
    let mut limiter = relay.config.rate_limit_per_s.map(RateLimiter::new);
    let mut seat: Option<(String, PlayerId)> = None;

    let reply_error = |session_id: &str, code: ErrorCode, text: String| {
        debug!(%peer, %code, %text, "protocol error");
        let _ = control.send(WireMessage::error(session_id, code, text));
    };

    loop {
        let line = match read_line(&mut reader).await {
            Ok(Line::Text(line)) => line,
            Ok(Line::Eof) => break,
            Ok(Line::TooLong) => {
                let sid = seat.as_ref().map_or("", |s| s.0.as_str());
                reply_error(sid, ErrorCode::LineTooLong, "line exceeds 4096 bytes".into());
                break;
            }
            Err(e) => {
                debug!(%peer, error = %e, "read failed");
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let msg = match WireMessage::decode(&line) {
            Ok(msg) => msg,
            Err(e) => {
                let sid = seat.as_ref().map_or("", |s| s.0.as_str());
                reply_error(sid, e.code(), e.to_string());
                break;
            }
        };
        match msg {
            WireMessage::Ping {
                session_id,
                mut payload,
            } => {
                if let Some(c) = seat.as_ref().and_then(|(sid, _)| relay.counters(sid)) {
                    payload.insert("forwarded".into(), Value::from(c.forwarded));
                    payload.insert("dropped".into(), Value::from(c.dropped));
                }
                let _ = control.send(WireMessage::Pong { session_id, payload });
            }
            WireMessage::Join { session_id, player_id } => {
                if seat.is_some() {
                    reply_error(&session_id, ErrorCode::BadMessage, "already joined".into());
                    break;
                }
                let slot = PlayerSlot {
                    conn_id,
                    queue: queue.clone(),
                    control: control.clone(),
                };
                match relay.join(&session_id, player_id, slot) {
                    Ok(partner_present) => {
                        info!(%peer, session = %session_id, player = %player_id, partner_present, "joined");
                        seat = Some((session_id, player_id));
                    }
                    Err(code) => {
                        let text = match code {
                            ErrorCode::SessionFull => "session already has two players".to_string(),
                            _ => format!("player {player_id} is already connected"),
                        };
                        reply_error(&session_id, code, text);
                        break;
                    }
                }
            }
            WireMessage::Sample { .. } | WireMessage::Profile { .. } | WireMessage::Leave { .. } => {
                let Some((sid, me)) = seat.as_ref() else {
                    reply_error(msg.session_id(), ErrorCode::NotJoined, "join a session first".into());
                    break;
                };
                if msg.session_id() != sid || msg.player_id() != Some(*me) {
                    reply_error(
                        sid,
                        ErrorCode::BadMessage,
                        format!("connection is seated as {me} in {sid:?}"),
                    );
                    break;
                }
                let limited = !matches!(msg, WireMessage::Leave { .. });
                if limited && limiter.as_mut().is_some_and(|l| !l.try_take()) {
                    reply_error(
                        sid,
                        ErrorCode::RateLimited,
                        format!("{} rate limit exceeded", msg.kind()),
                    );
                    continue;
                }
                relay.forward(sid, *me, msg);
            }
            other => {
                let sid = seat.as_ref().map_or("", |s| s.0.as_str());
                reply_error(
                    sid,
                    ErrorCode::BadMessage,
                    format!("{} is sent by the relay only", other.kind()),
                );
                break;
            }
        }
    }

    if let Some((sid, me)) = &seat {
        relay.disconnect(sid, *me, conn_id);
        info!(%peer, session = %sid, player = %me, "left");
    }
    drop(control);
    queue.close();
    match writer.await {
        Ok(Err(e)) => debug!(%peer, error = %e, "write failed"),
        Err(e) => warn!(%peer, error = %e, "writer task failed"),
        Ok(Ok(())) => {}
    }
}

/// Accepts connections until `shutdown` resolves.
pub async fn serve_listener(
    listener: TcpListener,
    relay: Arc<Relay>,
    shutdown: impl Future<Output = ()>,
) -> std::io::Result<()> {
    let mut connections = JoinSet::new();
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            accepted = listener.accept() => {
                let (stream, peer) = match accepted {
                    Ok(x) => x,
                    Err(e) => {
                        warn!(error = %e, "accept failed");
                        continue;
                    }
                };
                connections.spawn(handle_connection(relay.clone(), stream, peer));
            }
            Some(_) = connections.join_next(), if !connections.is_empty() => {}
        }
    }
    connections.shutdown().await;
    Ok(())
}

/// Binds `addr` and relays until `shutdown` resolves.
pub async fn serve(
    addr: impl ToSocketAddrs,
    config: RelayConfig,
    shutdown: impl Future<Output = ()>,
) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, "relay listening");
    serve_listener(listener, Arc::new(Relay::new(config)), shutdown).await
}

/// A relay running on a background task.
pub struct RelayServer {
    local_addr: SocketAddr,
    relay: Arc<Relay>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RelayServer {
    pub async fn start(addr: impl ToSocketAddrs, config: RelayConfig) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let relay = Arc::new(Relay::new(config));
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve_listener(listener, relay.clone(), async {
            let _ = rx.await;
        }));
        Ok(Self {
            local_addr,
            relay,
            shutdown: Some(tx),
            task,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn relay(&self) -> &Arc<Relay> {
        &self.relay
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match (&mut self.task).await {
            Ok(r) => r,
            Err(e) => Err(std::io::Error::other(e)),
        }
    }
}

impl Drop for RelayServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
