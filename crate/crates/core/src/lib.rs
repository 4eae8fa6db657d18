//! Mutual biosignal transmission through heartbeat-like vibrations.
//!
//! Each player's heart rate and skin conductance are streamed through a small
//! two-party relay. The receiving side maps the partner's signals onto five
//! arousal and five valence levels, and renders a heartbeat-shaped drive
//! signal whose beat rate follows arousal and whose carrier frequency follows
//! valence.
//!
//! * [`synth`]: the waveform model and its renderers
//! * [`wav`]: 16-bit PCM encoding
//! * [`emotion`]: calibration, quantization, hysteresis, level tables
//! * [`sensor`]: scenario generators and trace files
//! * [`relay`]: wire protocol, relay server, client handle
//! * [`session`]: one player's end of a session, offline pipeline, simulation

pub mod analysis;
pub mod emotion;
pub mod relay;
pub mod sensor;
pub mod session;
pub mod synth;
pub mod wav;

mod error;

pub use emotion::{BiosignalSample, CalibrationProfile, EmotionLevels, Preset};
pub use error::DomainError;
pub use relay::protocol::{PlayerId, WireMessage};
pub use sensor::ScenarioSpec;
pub use session::LevelFrame;
pub use synth::{AudioBuffer, HeartbeatParams};
