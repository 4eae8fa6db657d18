//! Two-party biosignal relay over newline-delimited JSON on TCP.
//!
//! Each session seats players `A` and `B`. Samples and profiles from one
//! player are forwarded to the other through a bounded queue that drops the
//! oldest sample when the partner falls behind, so a stalled reader never
//! blocks the sender. The last profile of each player is cached and handed to
//! a partner that joins later.

pub mod client;
pub mod protocol;
pub mod server;
pub mod state;

pub use client::{ClientError, ClientReceiver, ClientSender, PingReport, RelayClient};
pub use protocol::{ErrorCode, PlayerId, WireMessage};
pub use server::{serve, Relay, RelayConfig, RelayServer, DEFAULT_RATE_LIMIT};
pub use state::{ForwardOutcome, ForwardQueue, SessionCounters, SessionState, DEFAULT_QUEUE_CAPACITY};
