//! Transfer state machines.
//!
//! A session consumes timestamped [`Event`]s and returns [`Action`]s. It
//! never touches sockets or clocks itself, so the same code runs under the
//! simulator and over real datagrams, and a recorded event trace replays to
//! the identical action log.

mod receiver;
mod sender;
pub mod sim;
mod source;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rate::PacerConfig;
use crate::time::Timestamp;
use crate::wire::{Packet, WireConfig, WireError};

pub use receiver::{ReceiverSession, ReceiverState};
pub use sender::{SenderSession, SenderState};
pub use source::{sha256_source, ByteSource, FileSource, MemSource, SyntheticSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMode {
    File,
    Stream,
}

/// Timers a session may ask its driver to run. Setting a timer replaces any
/// earlier deadline for the same id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimerId {
    /// Next paced data packet may be built.
    Transmit,
    /// Sender poll for a Status when no data is flowing.
    Solicit,
    /// Peer silence check.
    Idle,
    /// Receiver periodic Status.
    Status,
    /// Receiver retransmission of a get Request.
    Request,
    /// Receiver stays around after completion to answer late polls.
    Linger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    /// Session begins; initiators send their opening packets.
    Start {
        now: Timestamp,
    },
    PacketArrived {
        packet: Packet,
        now: Timestamp,
    },
    TimerFired {
        timer: TimerId,
        now: Timestamp,
    },
    /// New bytes from the application (stream sender only).
    StreamData {
        #[serde(with = "crate::trace::hex_bytes")]
        bytes: Vec<u8>,
        now: Timestamp,
    },
    /// The application closed the stream.
    StreamEnd {
        now: Timestamp,
    },
}

impl Event {
    pub fn now(&self) -> Timestamp {
        match self {
            Event::Start { now }
            | Event::PacketArrived { now, .. }
            | Event::TimerFired { now, .. }
            | Event::StreamData { now, .. }
            | Event::StreamEnd { now } => *now,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum AbortReason {
    IdleTimeout,
    ProtocolViolation { detail: String },
    DigestMismatch,
    SourceOverrun,
    SourceError { detail: String },
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AbortReason::IdleTimeout => f.write_str("peer idle timeout"),
            AbortReason::ProtocolViolation { detail } => write!(f, "protocol violation: {detail}"),
            AbortReason::DigestMismatch => f.write_str("digest mismatch"),
            AbortReason::SourceOverrun => f.write_str("stream source overran the send window"),
            AbortReason::SourceError { detail } => write!(f, "source read failed: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    SendPacket {
        packet: Packet,
        earliest: Timestamp,
    },
    SetTimer {
        timer: TimerId,
        deadline: Timestamp,
    },
    WriteSink {
        offset: u128,
        #[serde(with = "crate::trace::hex_bytes")]
        bytes: Vec<u8>,
    },
    /// Informational: the sender read this span from its source.
    ReadSource {
        offset: u128,
        len: u64,
    },
    Finished {
        report: TransferReport,
    },
    Abort {
        reason: AbortReason,
    },
}

/// Outcome of a transfer as seen from one side (or combined by a harness).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// `unique_bytes + retransmitted_bytes`.
    pub bytes_delivered: u128,
    pub unique_bytes: u128,
    pub retransmitted_bytes: u128,
    pub duration_s: f64,
    /// `8 * unique_bytes / duration_s`, 0 for a zero duration.
    pub goodput_bps: f64,
    pub status_packets: u64,
    pub digest_ok: bool,
    /// Stream bytes abandoned as unrecoverable; absent for file transfers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_bytes: Option<u128>,
}

impl TransferReport {
    pub fn new(
        unique_bytes: u128,
        retransmitted_bytes: u128,
        duration: Duration,
        status_packets: u64,
        digest_ok: bool,
    ) -> Self {
        let duration_s = duration.as_secs_f64();
        let goodput_bps = if duration_s > 0.0 {
            8.0 * unique_bytes as f64 / duration_s
        } else {
            0.0
        };
        Self {
            bytes_delivered: unique_bytes + retransmitted_bytes,
            unique_bytes,
            retransmitted_bytes,
            duration_s,
            goodput_bps,
            status_packets,
            digest_ok,
            gap_bytes: None,
        }
    }
}

/// Per-session tunables shared by both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub wire: WireConfig,
    pub pacer: PacerConfig,
    pub status_interval: Duration,
    pub max_idle: Duration,
    /// How long a completed receiver keeps answering polls.
    pub linger: Duration,
    /// Stream repair window in bytes.
    pub stream_window: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            wire: WireConfig::default(),
            pacer: PacerConfig::Line,
            status_interval: Duration::from_millis(200),
            max_idle: Duration::from_secs(5),
            linger: Duration::from_secs(1),
            stream_window: 1 << 20,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        self.wire.validate()?;
        if self.status_interval.is_zero() {
            return Err(SessionError::InvalidConfig(
                "status interval must be positive",
            ));
        }
        if self.max_idle.is_zero() {
            return Err(SessionError::InvalidConfig("max idle must be positive"));
        }
        if self.stream_window == 0 {
            return Err(SessionError::InvalidConfig(
                "stream window must be positive",
            ));
        }
        match self.pacer {
            PacerConfig::Fixed { rate_bps: 0 }
            | PacerConfig::Tfrc {
                max_rate_bps: 0, ..
            } => Err(SessionError::InvalidConfig("pacing rate must be positive")),
            PacerConfig::Tfrc { initial_rtt_s, .. }
                if initial_rtt_s.is_nan() || initial_rtt_s <= 0.0 =>
            {
                Err(SessionError::InvalidConfig("initial rtt must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("source: {0}")]
    Io(#[from] std::io::Error),
}
