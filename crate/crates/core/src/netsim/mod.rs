//! Deterministic discrete-event link simulation and the TCP reference flow
//! used for the line-rate versus AIMD comparison.

mod compare;
mod link;
mod queue;
mod tcp;

use thiserror::Error;

pub use compare::{
    run_comparison, ComparisonConfig, ComparisonReport, Flow, TraceRow, REPORT_SCHEMA_VERSION,
};
pub use link::{Bernoulli, LinkOutcome, LinkStats, LossProcess, SimLink, SimLinkConfig};
pub use queue::EventQueue;
pub use tcp::{
    run_tcp_reference, run_tcp_reference_with_queue, TcpPhase, TcpRefConfig, TcpRefState, TcpSample,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid simulation parameter: {0}")]
    InvalidConfig(&'static str),
}
