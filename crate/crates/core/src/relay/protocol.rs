//! Newline-delimited JSON wire format shared by the relay and its clients.
//!
//! Every line is one UTF-8 JSON object of at most [`MAX_LINE`] bytes with a
//! `"kind"` and a `"session_id"`. Unknown fields are ignored; an unknown kind
//! is answered with `bad_kind`.
//!
//! | kind      | fields besides `kind`, `session_id`                          |
//! |-----------|--------------------------------------------------------------|
//! | `join`    | `player_id`                                                  |
//! | `joined`  | `player_id` (who joined), `partner_present`                  |
//! | `profile` | `player_id`, `hr_rest`, `hr_stress`, `eda_rest`, `eda_stress`|
//! | `sample`  | `player_id`, `t_ms`, `hr_bpm`, `eda_us`                      |
//! | `leave`   | `player_id` (who left)                                       |
//! | `error`   | `code`, `text`                                               |
//! | `ping`    | any extra fields, echoed back                                |
//! | `pong`    | the ping's extra fields plus relay counters                  |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use tokio::io::{AsyncBufRead, AsyncBufReadExt};

use crate::emotion::{BiosignalSample, CalibrationProfile};
use crate::sensor::round_milli;

/// Longest accepted line, excluding the terminating newline.
pub const MAX_LINE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlayerId {
    A,
    B,
}

impl PlayerId {
    pub fn partner(self) -> Self {
        match self {
            PlayerId::A => PlayerId::B,
            PlayerId::B => PlayerId::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            PlayerId::A => 0,
            PlayerId::B => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PlayerId::A => "A",
            PlayerId::B => "B",
        }
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlayerId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(PlayerId::A),
            "B" => Ok(PlayerId::B),
            other => Err(format!("player_id must be \"A\" or \"B\", got {other:?}")),
        }
    }
}

/// Error codes carried in `error` messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ErrorCode {
    SessionFull,
    PlayerTaken,
    BadKind,
    BadMessage,
    BadSample,
    RateLimited,
    NotJoined,
    LineTooLong,
    Other(String),
}

impl ErrorCode {
    pub fn as_str(&self) -> &str {
        match self {
            ErrorCode::SessionFull => "session_full",
            ErrorCode::PlayerTaken => "player_taken",
            ErrorCode::BadKind => "bad_kind",
            ErrorCode::BadMessage => "bad_message",
            ErrorCode::BadSample => "bad_sample",
            ErrorCode::RateLimited => "rate_limited",
            ErrorCode::NotJoined => "not_joined",
            ErrorCode::LineTooLong => "line_too_long",
            ErrorCode::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "session_full" => ErrorCode::SessionFull,
            "player_taken" => ErrorCode::PlayerTaken,
            "bad_kind" => ErrorCode::BadKind,
            "bad_message" => ErrorCode::BadMessage,
            "bad_sample" => ErrorCode::BadSample,
            "rate_limited" => ErrorCode::RateLimited,
            "not_joined" => ErrorCode::NotJoined,
            "line_too_long" => ErrorCode::LineTooLong,
            other => ErrorCode::Other(other.to_string()),
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Join {
        session_id: String,
        player_id: PlayerId,
    },
    Joined {
        session_id: String,
        player_id: PlayerId,
        partner_present: bool,
    },
    Profile {
        session_id: String,
        player_id: PlayerId,
        profile: CalibrationProfile,
    },
    Sample {
        session_id: String,
        player_id: PlayerId,
        sample: BiosignalSample,
    },
    Leave {
        session_id: String,
        player_id: PlayerId,
    },
    Error {
        session_id: String,
        code: ErrorCode,
        text: String,
    },
    Ping {
        session_id: String,
        payload: Map<String, Value>,
    },
    Pong {
        session_id: String,
        payload: Map<String, Value>,
    },
}

/// Why a line could not be turned into a [`WireMessage`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown kind {0:?}")]
    BadKind(String),
    #[error("{0}")]
    BadMessage(String),
    #[error("{0}")]
    BadSample(String),
}

impl DecodeError {
    pub fn code(&self) -> ErrorCode {
        match self {
            DecodeError::BadKind(_) => ErrorCode::BadKind,
            DecodeError::BadMessage(_) => ErrorCode::BadMessage,
            DecodeError::BadSample(_) => ErrorCode::BadSample,
        }
    }
}

fn milli(x: f64) -> Value {
    Number::from_f64(round_milli(x)).map_or(Value::Null, Value::Number)
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Join { .. } => "join",
            WireMessage::Joined { .. } => "joined",
            WireMessage::Profile { .. } => "profile",
            WireMessage::Sample { .. } => "sample",
            WireMessage::Leave { .. } => "leave",
            WireMessage::Error { .. } => "error",
            WireMessage::Ping { .. } => "ping",
            WireMessage::Pong { .. } => "pong",
        }
    }

    pub fn session_id(&self) -> &str {
        match self {
            WireMessage::Join { session_id, .. }
            | WireMessage::Joined { session_id, .. }
            | WireMessage::Profile { session_id, .. }
            | WireMessage::Sample { session_id, .. }
            | WireMessage::Leave { session_id, .. }
            | WireMessage::Error { session_id, .. }
            | WireMessage::Ping { session_id, .. }
            | WireMessage::Pong { session_id, .. } => session_id,
        }
    }

    pub fn player_id(&self) -> Option<PlayerId> {
        match self {
            WireMessage::Join { player_id, .. }
            | WireMessage::Joined { player_id, .. }
            | WireMessage::Profile { player_id, .. }
            | WireMessage::Sample { player_id, .. }
            | WireMessage::Leave { player_id, .. } => Some(*player_id),
            _ => None,
        }
    }

    pub fn error(session_id: impl Into<String>, code: ErrorCode, text: impl Into<String>) -> Self {
        WireMessage::Error {
            session_id: session_id.into(),
            code,
            text: text.into(),
        }
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("kind".into(), self.kind().into());
        m.insert("session_id".into(), self.session_id().into());
        if let Some(p) = self.player_id() {
            m.insert("player_id".into(), p.as_str().into());
        }
        match self {
            WireMessage::Joined { partner_present, .. } => {
                m.insert("partner_present".into(), (*partner_present).into());
            }
            WireMessage::Profile { profile, .. } => {
                m.insert("hr_rest".into(), milli(profile.hr_rest));
                m.insert("hr_stress".into(), milli(profile.hr_stress));
                m.insert("eda_rest".into(), milli(profile.eda_rest));
                m.insert("eda_stress".into(), milli(profile.eda_stress));
            }
            WireMessage::Sample { sample, .. } => {
                m.insert("t_ms".into(), sample.t_ms.into());
                m.insert("hr_bpm".into(), milli(sample.hr_bpm));
                m.insert("eda_us".into(), milli(sample.eda_us));
            }
            WireMessage::Error { code, text, .. } => {
                m.insert("code".into(), code.as_str().into());
                m.insert("text".into(), text.as_str().into());
            }
            WireMessage::Ping { payload, .. } | WireMessage::Pong { payload, .. } => {
                for (k, v) in payload {
                    m.entry(k.clone()).or_insert_with(|| v.clone());
                }
            }
            WireMessage::Join { .. } | WireMessage::Leave { .. } => {}
        }
        Value::Object(m)
    }

    /// One line of JSON including the trailing `\n`.
    pub fn encode(&self) -> String {
        let mut s = self.to_value().to_string();
        s.push('\n');
        s
    }

    pub fn decode(line: &str) -> Result<Self, DecodeError> {
        let value: Value =
            serde_json::from_str(line).map_err(|e| DecodeError::BadMessage(format!("invalid JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, DecodeError> {
        let Value::Object(mut m) = value else {
            return Err(DecodeError::BadMessage("expected a JSON object".into()));
        };
        let kind = match m.remove("kind") {
            Some(Value::String(k)) => k,
            _ => return Err(DecodeError::BadMessage("missing string field \"kind\"".into())),
        };
        if !matches!(
            kind.as_str(),
            "join" | "joined" | "profile" | "sample" | "leave" | "error" | "ping" | "pong"
        ) {
            return Err(DecodeError::BadKind(kind));
        }
        let session_id = match m.remove("session_id") {
            Some(Value::String(s)) => s,
            _ => return Err(DecodeError::BadMessage("missing string field \"session_id\"".into())),
        };
        let player = |m: &Map<String, Value>| -> Result<PlayerId, DecodeError> {
            m.get("player_id")
                .and_then(Value::as_str)
                .ok_or_else(|| DecodeError::BadMessage("missing string field \"player_id\"".into()))?
                .parse()
                .map_err(DecodeError::BadMessage)
        };
        let number = |m: &Map<String, Value>, key: &str| -> Result<f64, DecodeError> {
            m.get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| DecodeError::BadMessage(format!("missing numeric field {key:?}")))
        };
        let msg = match kind.as_str() {
            "join" => WireMessage::Join {
                player_id: player(&m)?,
                session_id,
            },
            "joined" => WireMessage::Joined {
                player_id: player(&m)?,
                partner_present: m
                    .get("partner_present")
                    .and_then(Value::as_bool)
                    .ok_or_else(|| DecodeError::BadMessage("missing boolean field \"partner_present\"".into()))?,
                session_id,
            },
            "profile" => {
                let profile = CalibrationProfile {
                    hr_rest: number(&m, "hr_rest")?,
                    hr_stress: number(&m, "hr_stress")?,
                    eda_rest: number(&m, "eda_rest")?,
                    eda_stress: number(&m, "eda_stress")?,
                };
                profile
                    .validate()
                    .map_err(|e| DecodeError::BadMessage(format!("profile: {e}")))?;
                WireMessage::Profile {
                    player_id: player(&m)?,
                    session_id,
                    profile,
                }
            }
            "sample" => {
                let t_ms = m
                    .get("t_ms")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| DecodeError::BadMessage("\"t_ms\" must be a non-negative integer".into()))?;
                let sample = BiosignalSample {
                    t_ms,
                    hr_bpm: number(&m, "hr_bpm")?,
                    eda_us: number(&m, "eda_us")?,
                };
                sample.validate().map_err(|e| DecodeError::BadSample(e.to_string()))?;
                WireMessage::Sample {
                    player_id: player(&m)?,
                    session_id,
                    sample,
                }
            }
            "leave" => WireMessage::Leave {
                player_id: player(&m)?,
                session_id,
            },
            "error" => WireMessage::Error {
                code: ErrorCode::parse(m.get("code").and_then(Value::as_str).unwrap_or("")),
                text: m.get("text").and_then(Value::as_str).unwrap_or("").to_string(),
                session_id,
            },
            "ping" => WireMessage::Ping { session_id, payload: m },
            "pong" => WireMessage::Pong { session_id, payload: m },
            _ => unreachable!("kind checked above"),
        };
        Ok(msg)
    }
}

/// Outcome of reading one framed line.
#[derive(Debug, PartialEq, Eq)]
pub enum Line {
    Text(String),
    TooLong,
    Eof,
}

/// Reads one `\n`-terminated line of at most [`MAX_LINE`] bytes.
///
/// An over-long line is consumed through its newline and reported as
/// [`Line::TooLong`]. A final line without a newline is still returned.
pub async fn read_line<R: AsyncBufRead + Unpin>(reader: &mut R) -> std::io::Result<Line> {
    let mut buf = Vec::new();
    let mut overflow = false;
    loop {
        let chunk = reader.fill_buf().await?;
        if chunk.is_empty() {
            if overflow {
                return Ok(Line::TooLong);
            }
            if buf.is_empty() {
                return Ok(Line::Eof);
            }
            break;
        }
        let (take, done) = match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => (i + 1, true),
            None => (chunk.len(), false),
        };
        if !overflow {
            buf.extend_from_slice(&chunk[..take]);
            if buf.len() > MAX_LINE + 1 || (buf.len() == MAX_LINE + 1 && !done) {
                overflow = true;
                buf.clear();
            }
        }
        reader.consume(take);
        if done {
            break;
        }
    }
    if overflow {
        return Ok(Line::TooLong);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    }
    if buf.last() == Some(&b'\r') {
        buf.pop();
    }
    String::from_utf8(buf)
        .map(Line::Text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
