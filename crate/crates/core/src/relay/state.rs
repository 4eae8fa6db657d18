//! Per-session relay state: two player slots, bounded forward queues and
//! counters.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use tokio::sync::{mpsc, Notify};

use super::protocol::{ErrorCode, PlayerId, WireMessage};
use crate::emotion::CalibrationProfile;

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

/// Bounded outbound queue of one connection.
///
/// When full, the oldest queued `sample` is evicted (or the oldest message
/// if no sample is queued). Pushing never waits.
#[derive(Debug)]
pub struct ForwardQueue {
    items: Mutex<VecDeque<WireMessage>>,
    capacity: usize,
    notify: Notify,
    closed: AtomicBool,
}

impl ForwardQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            items: Mutex::new(VecDeque::with_capacity(capacity)),
            capacity,
            notify: Notify::new(),
            closed: AtomicBool::new(false),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enqueues `msg`; returns the evicted message, if any.
    pub fn push(&self, msg: WireMessage) -> Option<WireMessage> {
        let evicted = {
            let mut items = self.items.lock().unwrap();
            let evicted = if items.len() >= self.capacity {
                let victim = items
                    .iter()
                    .position(|m| matches!(m, WireMessage::Sample { .. }))
                    .unwrap_or(0);
                items.remove(victim)
            } else {
                None
            };
            items.push_back(msg);
            evicted
        };
        self.notify.notify_one();
        evicted
    }

    pub fn pop(&self) -> Option<WireMessage> {
        self.items.lock().unwrap().pop_front()
    }

    pub fn snapshot(&self) -> Vec<WireMessage> {
        self.items.lock().unwrap().iter().cloned().collect()
    }

    /// Resolves once something was pushed since the last wake-up, or the
    /// queue was closed.
    pub async fn wait(&self) {
        self.notify.notified().await;
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.notify.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }
}

/// A connected player.
#[derive(Debug, Clone)]
pub struct PlayerSlot {
    pub conn_id: u64,
    pub queue: Arc<ForwardQueue>,
    /// Direct replies (joined, pong, error) that bypass the data queue.
    pub control: mpsc::UnboundedSender<WireMessage>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct SessionCounters {
    pub forwarded: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardOutcome {
    Enqueued,
    /// Enqueued after evicting an older message.
    EnqueuedDroppedOldest,
    PartnerAbsent,
}

#[derive(Debug)]
pub struct SessionState {
    pub session_id: String,
    slots: [Option<PlayerSlot>; 2],
    profiles: [Option<CalibrationProfile>; 2],
    pub counters: SessionCounters,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            slots: [None, None],
            profiles: [None, None],
            counters: SessionCounters::default(),
        }
    }

    pub fn slot(&self, player: PlayerId) -> Option<&PlayerSlot> {
        self.slots[player.index()].as_ref()
    }

    pub fn is_connected(&self, player: PlayerId) -> bool {
        self.slot(player).is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    pub fn profile(&self, player: PlayerId) -> Option<CalibrationProfile> {
        self.profiles[player.index()]
    }

    /// Seats `player`. On success returns whether the partner is connected.
    ///
    /// The partner's cached profile, if any, is queued for the newcomer and
    /// the partner is told about the arrival.
    pub fn join(&mut self, player: PlayerId, slot: PlayerSlot) -> Result<bool, ErrorCode> {
        if self.slots.iter().all(Option::is_some) {
            return Err(ErrorCode::SessionFull);
        }
        if self.is_connected(player) {
            return Err(ErrorCode::PlayerTaken);
        }
        let partner = player.partner();
        let partner_present = self.is_connected(partner);
        let _ = slot.control.send(WireMessage::Joined {
            session_id: self.session_id.clone(),
            player_id: player,
            partner_present,
        });
        if let Some(profile) = self.profiles[partner.index()] {
            slot.queue.push(WireMessage::Profile {
                session_id: self.session_id.clone(),
                player_id: partner,
                profile,
            });
        }
        if let Some(p) = self.slot(partner) {
            let _ = p.control.send(WireMessage::Joined {
                session_id: self.session_id.clone(),
                player_id: player,
                partner_present: true,
            });
        }
        self.slots[player.index()] = Some(slot);
        Ok(partner_present)
    }

    /// Unseats `player` if `conn_id` still owns the slot, and tells the
    /// partner it left.
    pub fn disconnect(&mut self, player: PlayerId, conn_id: u64) {
        let owned = self.slot(player).is_some_and(|s| s.conn_id == conn_id);
        if !owned {
            return;
        }
        if let Some(slot) = self.slots[player.index()].take() {
            slot.queue.close();
        }
        let leave = WireMessage::Leave {
            session_id: self.session_id.clone(),
            player_id: player,
        };
        if let Some(p) = self.slot(player.partner()) {
            p.queue.push(leave);
        }
    }

    /// Forwards a message from `from` to the partner's queue.
    ///
    /// Profiles are also cached for a partner that joins later.
    pub fn forward(&mut self, from: PlayerId, msg: WireMessage) -> ForwardOutcome {
        if let WireMessage::Profile { profile, .. } = &msg {
            self.profiles[from.index()] = Some(*profile);
        }
        let Some(partner) = self.slots[from.partner().index()].as_ref() else {
            self.counters.dropped += 1;
            return ForwardOutcome::PartnerAbsent;
        };
        self.counters.forwarded += 1;
        match partner.queue.push(msg) {
            None => ForwardOutcome::Enqueued,
            Some(_) => {
                self.counters.dropped += 1;
                ForwardOutcome::EnqueuedDroppedOldest
            }
        }
    }
}
