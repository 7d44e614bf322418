//! Reliable file and stream transfer over an unreliable datagram service.
//!
//! The receiver reports missing byte ranges (holes) in Status packets and
//! the sender repairs them, so the sender never has to slow down for loss.
//! Offsets are written at 16, 32, 64 or 128 bits depending on the transfer
//! size. Sending can be unpaced, paced at a fixed rate, or governed by a
//! sender-side TFRC controller.
//!
//! - [`wire`] encodes and decodes packets.
//! - [`holes`] tracks received ranges.
//! - [`session`] holds the sender and receiver state machines and a
//!   simulated harness that runs them against each other.
//! - [`rate`] decides when packets may leave.
//! - [`netsim`] models lossy links and a fluid TCP flow for comparison.

pub mod holes;
pub mod netsim;
pub mod rate;
pub mod session;
pub mod time;
pub mod trace;
pub mod wire;

pub use holes::{ByteRange, HoleTracker};
pub use time::Timestamp;
