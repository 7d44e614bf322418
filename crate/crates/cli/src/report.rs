use std::io::{self, Write};

use saratoga::session::{AbortReason, TransferMode, TransferReport};
use serde::Serialize;

use crate::net::{Failure, NetStats, Outcome};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sender,
    Receiver,
}

/// What `send` and `recv` print when they finish.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub role: Role,
    pub mode: TransferMode,
    pub ok: bool,
    pub error: Option<String>,
    /// `digest_mismatch`, `idle_timeout`, `no_peer`, ...
    pub error_kind: Option<String>,
    pub session_id: Option<u32>,
    pub peer: Option<String>,
    pub path: Option<String>,
    pub output: Option<String>,
    /// Hex SHA-256 of the file sent or written.
    pub digest: Option<String>,
    pub pacer: String,
    pub elapsed_s: f64,
    pub transfer: Option<TransferReport>,
    pub net: NetStats,
}

impl RunReport {
    pub fn from_outcome(role: Role, mode: TransferMode, pacer: String, o: &Outcome) -> Self {
        let now = saratoga::Timestamp(o.elapsed.as_nanos() as u64);
        let transfer = match &o.result {
            Ok(r) => Some(r.clone()),
            Err(_) => o.endpoint.as_ref().map(|e| e.report(now)),
        };
        let (error, error_kind) = match &o.result {
            Ok(_) => (None, None),
            Err(f) => (Some(f.to_string()), Some(kind(f).to_string())),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            role,
            mode,
            ok: o.result.is_ok(),
            error,
            error_kind,
            session_id: o.endpoint.as_ref().map(|e| e.session_id()),
            peer: o.peer.map(|p| p.to_string()),
            path: None,
            output: None,
            digest: None,
            pacer,
            elapsed_s: o.elapsed.as_secs_f64(),
            transfer,
            net: o.stats,
        }
    }

    pub fn print(&self, mut w: impl Write) -> io::Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)
    }
}

fn kind(f: &Failure) -> &'static str {
    match f {
        Failure::Aborted(r) => match r {
            AbortReason::IdleTimeout => "idle_timeout",
            AbortReason::ProtocolViolation { .. } => "protocol_violation",
            AbortReason::DigestMismatch => "digest_mismatch",
            AbortReason::SourceOverrun => "source_overrun",
            AbortReason::SourceError { .. } => "source_error",
        },
        Failure::Sink(_) => "output_error",
        Failure::StreamInput(_) => "input_error",
        Failure::NoPeer(_) => "no_peer",
    }
}
