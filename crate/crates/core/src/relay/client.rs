//! Client side of the relay protocol.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::{Map, Value};
use tokio::io::{AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot, watch};

use super::protocol::{read_line, ErrorCode, Line, PlayerId, WireMessage};
use crate::emotion::{BiosignalSample, CalibrationProfile};

pub const JOIN_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("relay i/o")]
    Io(#[from] std::io::Error),
    #[error("relay refused: {code}: {text}")]
    Refused { code: ErrorCode, text: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("timed out waiting for the relay")]
    Timeout,
    #[error("connection closed")]
    Closed,
}

impl ClientError {
    /// The relay's error code for a refused join.
    pub fn code(&self) -> Option<&ErrorCode> {
        match self {
            ClientError::Refused { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// Result of one ping/pong exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PingReport {
    pub rtt: Duration,
    /// Session counters reported by the relay, when seated.
    pub forwarded: Option<u64>,
    pub dropped: Option<u64>,
}

type PendingPings = Arc<Mutex<HashMap<u64, (Instant, oneshot::Sender<PingReport>)>>>;

/// Sending half; cheap to clone, usable from several tasks at once.
#[derive(Clone)]
pub struct ClientSender {
    session_id: Arc<str>,
    player_id: PlayerId,
    writer: Arc<tokio::sync::Mutex<OwnedWriteHalf>>,
    pending: PendingPings,
    next_nonce: Arc<AtomicU64>,
    partner: watch::Receiver<bool>,
}

/// Receiving half: partner messages in arrival order.
///
/// Dropping it discards later partner messages; pongs are still handled
/// until the connection closes.
pub struct ClientReceiver {
    inbox: mpsc::UnboundedReceiver<WireMessage>,
}

/// A seated connection to the relay.
pub struct RelayClient {
    pub sender: ClientSender,
    pub receiver: ClientReceiver,
    partner_present_at_join: bool,
}

impl RelayClient {
    /// Connects and joins `session_id` as `player_id`.
    pub async fn connect(addr: impl ToSocketAddrs, session_id: &str, player_id: PlayerId) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (read_half, mut write_half) = stream.into_split();
        let mut reader = BufReader::new(read_half);
        let join = WireMessage::Join {
            session_id: session_id.to_string(),
            player_id,
        };
        write_half.write_all(join.encode().as_bytes()).await?;

        let partner_present = tokio::time::timeout(JOIN_TIMEOUT, async {
            match read_message(&mut reader).await? {
                Some(WireMessage::Joined {
                    player_id: p,
                    partner_present,
                    ..
                }) if p == player_id => Ok(partner_present),
                Some(WireMessage::Error { code, text, .. }) => Err(ClientError::Refused { code, text }),
                Some(other) => Err(ClientError::Protocol(format!(
                    "unexpected {} before joined",
                    other.kind()
                ))),
                None => Err(ClientError::Closed),
            }
        })
        .await
        .map_err(|_| ClientError::Timeout)??;

        let (partner_tx, partner_rx) = watch::channel(partner_present);
        let (inbox_tx, inbox) = mpsc::unbounded_channel();
        let pending: PendingPings = Arc::default();
        tokio::spawn(read_loop(reader, player_id, inbox_tx, pending.clone(), partner_tx));
        Ok(Self {
            sender: ClientSender {
                session_id: session_id.into(),
                player_id,
                writer: Arc::new(tokio::sync::Mutex::new(write_half)),
                pending,
                next_nonce: Arc::new(AtomicU64::new(1)),
                partner: partner_rx,
            },
            receiver: ClientReceiver { inbox },
            partner_present_at_join: partner_present,
        })
    }

    pub fn partner_present_at_join(&self) -> bool {
        self.partner_present_at_join
    }

    pub fn into_split(self) -> (ClientSender, ClientReceiver) {
        (self.sender, self.receiver)
    }
}

async fn read_message(reader: &mut BufReader<OwnedReadHalf>) -> Result<Option<WireMessage>, ClientError> {
    loop {
        match read_line(reader).await? {
            Line::Eof => return Ok(None),
            Line::TooLong => return Err(ClientError::Protocol("relay sent an over-long line".into())),
            Line::Text(t) if t.trim().is_empty() => continue,
            Line::Text(t) => {
                return WireMessage::decode(&t)
                    .map(Some)
                    .map_err(|e| ClientError::Protocol(e.to_string()))
            }
        }
    }
}

async fn read_loop(
    mut reader: BufReader<OwnedReadHalf>,
    me: PlayerId,
    inbox: mpsc::UnboundedSender<WireMessage>,
    pending: PendingPings,
    partner: watch::Sender<bool>,
) {
    while let Ok(Some(msg)) = read_message(&mut reader).await {
        match &msg {
            WireMessage::Pong { payload, .. } => {
                let waiter = payload
                    .get("nonce")
                    .and_then(Value::as_u64)
                    .and_then(|n| pending.lock().unwrap().remove(&n));
                if let Some((sent, tx)) = waiter {
                    let _ = tx.send(PingReport {
                        rtt: sent.elapsed(),
                        forwarded: payload.get("forwarded").and_then(Value::as_u64),
                        dropped: payload.get("dropped").and_then(Value::as_u64),
                    });
                }
                continue;
            }
            WireMessage::Joined { player_id, .. } if *player_id != me => {
                partner.send_replace(true);
            }
            WireMessage::Leave { player_id, .. } if *player_id != me => {
                partner.send_replace(false);
            }
            _ => {}
        }
        let _ = inbox.send(msg);
    }
    pending.lock().unwrap().clear();
}

impl ClientSender {
    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn player_id(&self) -> PlayerId {
        self.player_id
    }

    pub fn partner_present(&self) -> bool {
        *self.partner.borrow()
    }

    /// Waits until the partner is seated or `timeout` elapses.
    pub async fn wait_for_partner(&self, timeout: Duration) -> bool {
        let mut rx = self.partner.clone();
        tokio::time::timeout(timeout, rx.wait_for(|present| *present))
            .await
            .is_ok_and(|r| r.is_ok())
    }

    pub async fn send(&self, msg: &WireMessage) -> Result<(), ClientError> {
        let line = msg.encode();
        let mut w = self.writer.lock().await;
        w.write_all(line.as_bytes()).await?;
        Ok(())
    }

    pub async fn send_sample(&self, sample: &BiosignalSample) -> Result<(), ClientError> {
        self.send(&WireMessage::Sample {
            session_id: self.session_id.to_string(),
            player_id: self.player_id,
            sample: *sample,
        })
        .await
    }

    pub async fn send_profile(&self, profile: &CalibrationProfile) -> Result<(), ClientError> {
        self.send(&WireMessage::Profile {
            session_id: self.session_id.to_string(),
            player_id: self.player_id,
            profile: *profile,
        })
        .await
    }

    /// Announces that this player has finished publishing. The connection
    /// stays open for the partner's remaining messages.
    pub async fn send_leave(&self) -> Result<(), ClientError> {
        self.send(&WireMessage::Leave {
            session_id: self.session_id.to_string(),
            player_id: self.player_id,
        })
        .await
    }

    pub async fn ping(&self, timeout: Duration) -> Result<PingReport, ClientError> {
        let nonce = self.next_nonce.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = oneshot::channel();
        let mut payload = Map::new();
        payload.insert("nonce".into(), nonce.into());
        let msg = WireMessage::Ping {
            session_id: self.session_id.to_string(),
            payload,
        };
        let line = msg.encode();
        {
            let mut w = self.writer.lock().await;
            self.pending.lock().unwrap().insert(nonce, (Instant::now(), tx));
            w.write_all(line.as_bytes()).await?;
        }
        match tokio::time::timeout(timeout, rx).await {
            Ok(Ok(report)) => Ok(report),
            Ok(Err(_)) => Err(ClientError::Closed),
            Err(_) => {
                self.pending.lock().unwrap().remove(&nonce);
                Err(ClientError::Timeout)
            }
        }
    }

    /// Half-closes the connection.
    pub async fn close(&self) -> Result<(), ClientError> {
        self.writer.lock().await.shutdown().await?;
        Ok(())
    }
}

impl ClientReceiver {
    /// Next queued partner message without waiting.
    pub fn try_recv(&mut self) -> Option<WireMessage> {
        self.inbox.try_recv().ok()
    }

    /// Next partner message; `None` once the connection is gone.
    pub async fn recv(&mut self) -> Option<WireMessage> {
        self.inbox.recv().await
    }
}
