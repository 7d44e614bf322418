//! Packet pacing: unpaced line-rate output, a fixed-rate token bucket, or a
//! token bucket whose rate follows TFRC.

mod tfrc;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

pub use tfrc::{tfrc_throughput, TfrcState, LOSS_HISTORY, LOSS_WEIGHTS};

const NANOS_PER_SEC: u128 = 1_000_000_000;

/// User-facing pacing choice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PacerConfig {
    #[default]
    Line,
    Fixed {
        rate_bps: u64,
    },
    Tfrc {
        max_rate_bps: u64,
        initial_rtt_s: f64,
    },
}

/// Cap used by `tfrc` without an explicit rate.
pub const DEFAULT_TFRC_MAX_BPS: u64 = 100_000_000;
/// RTT assumed until the first Status answers a solicitation.
pub const DEFAULT_TFRC_INITIAL_RTT_S: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid pacer {0:?}: expected line, fixed:<bps> or tfrc[:<max_bps>]")]
pub struct ParsePacerError(String);

impl FromStr for PacerConfig {
    type Err = ParsePacerError;

    /// Parses `line`, `fixed:<bps>`, `tfrc` or `tfrc:<max_bps>`. Rates must
    /// be positive integers.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParsePacerError(s.to_string());
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let rate = |a: &str| match a.parse::<u64>() {
            Ok(r) if r > 0 => Ok(r),
            _ => Err(err()),
        };
        match (kind, arg) {
            ("line", None) => Ok(PacerConfig::Line),
            ("fixed", Some(a)) => Ok(PacerConfig::Fixed { rate_bps: rate(a)? }),
            ("tfrc", a) => Ok(PacerConfig::Tfrc {
                max_rate_bps: a.map(rate).transpose()?.unwrap_or(DEFAULT_TFRC_MAX_BPS),
                initial_rtt_s: DEFAULT_TFRC_INITIAL_RTT_S,
            }),
            _ => Err(err()),
        }
    }
}

impl fmt::Display for PacerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PacerConfig::Line => f.write_str("line"),
            PacerConfig::Fixed { rate_bps } => write!(f, "fixed:{rate_bps}"),
            PacerConfig::Tfrc { max_rate_bps, .. } => write!(f, "tfrc:{max_rate_bps}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PacerMode {
    LineRate,
    Fixed { rate_bps: u64 },
    Tfrc(TfrcState),
}

/// Decides when the next packet may leave.
///
/// The token bucket is kept in exact integer units of bit-nanoseconds so
/// the release bound `rate * w / 8 + burst_cap` holds without rounding slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pacer {
    mode: PacerMode,
    last_send: Option<Timestamp>,
    // bits * 1e9
    credit: u128,
    credit_cap: u128,
    refilled_at: Timestamp,
    burst_cap: u64,
}

impl Pacer {
    pub fn new(mode: PacerMode, burst_cap: u64) -> Self {
        let credit_cap = burst_cap as u128 * 8 * NANOS_PER_SEC;
        Self {
            mode,
            last_send: None,
            credit: credit_cap,
            credit_cap,
            refilled_at: Timestamp::ZERO,
            burst_cap,
        }
    }

    /// Builds a pacer from configuration, with a burst cap of eight payloads.
    pub fn from_config(cfg: PacerConfig, max_payload: usize) -> Self {
        let burst = 8 * max_payload as u64;
        let mode = match cfg {
            PacerConfig::Line => PacerMode::LineRate,
            PacerConfig::Fixed { rate_bps } => PacerMode::Fixed { rate_bps },
            PacerConfig::Tfrc {
                max_rate_bps,
                initial_rtt_s,
            } => PacerMode::Tfrc(TfrcState::new(
                max_payload as f64,
                max_rate_bps as f64 / 8.0,
                initial_rtt_s,
            )),
        };
        Self::new(mode, burst)
    }

    pub fn line_rate() -> Self {
        Self::new(PacerMode::LineRate, 0)
    }

    pub fn mode(&self) -> &PacerMode {
        &self.mode
    }

    pub fn burst_cap(&self) -> u64 {
        self.burst_cap
    }

    pub fn last_send(&self) -> Option<Timestamp> {
        self.last_send
    }

    /// Current rate in bits per second; `None` for line rate.
    pub fn rate_bps(&self) -> Option<u64> {
        match &self.mode {
            PacerMode::LineRate => None,
            PacerMode::Fixed { rate_bps } => Some(*rate_bps),
            PacerMode::Tfrc(st) => Some(((st.x * 8.0).round() as u64).max(1)),
        }
    }

    /// Bytes of send credit currently banked (as of the last update).
    pub fn bucket_bytes(&self) -> f64 {
        self.credit as f64 / (8.0 * NANOS_PER_SEC as f64)
    }

    fn refill(&mut self, to: Timestamp, rate_bps: u64) {
        if to > self.refilled_at {
            let dt = (to.0 - self.refilled_at.0) as u128;
            self.credit = (self.credit + dt * rate_bps as u128).min(self.credit_cap);
            self.refilled_at = to;
        }
    }

    /// Reserves a slot for a `pkt_bytes` packet and returns the earliest
    /// time it may be sent. Line rate never delays.
    pub fn earliest_send(&mut self, pkt_bytes: usize, now: Timestamp) -> Timestamp {
        let Some(rate) = self.rate_bps() else {
            self.last_send = Some(now);
            return now;
        };
        let rate = rate.max(1);
        let start = now.max(self.refilled_at);
        self.refill(start, rate);
        let cost = pkt_bytes.max(1) as u128 * 8 * NANOS_PER_SEC;
        let at = if self.credit >= cost {
            self.credit -= cost;
            start
        } else {
            let need = cost - self.credit;
            let wait = need.div_ceil(rate as u128);
            self.credit = self.credit + wait * rate as u128 - cost;
            Timestamp(start.0.saturating_add(wait.min(u64::MAX as u128) as u64))
        };
        self.refilled_at = at;
        self.last_send = Some(at);
        at
    }

    /// Feeds SNACK-derived feedback into a TFRC pacer; no-op otherwise.
    pub fn on_feedback(
        &mut self,
        rtt_sample: Option<f64>,
        new_loss_events: u64,
        packets_since_last: u64,
        now: Timestamp,
    ) {
        if !matches!(self.mode, PacerMode::Tfrc(_)) {
            return;
        }
        if let Some(old) = self.rate_bps() {
            self.refill(now, old);
        }
        if let PacerMode::Tfrc(st) = &mut self.mode {
            st.on_feedback(rtt_sample, new_loss_events, packets_since_last, now);
        }
    }

    pub fn tfrc(&self) -> Option<&TfrcState> {
        match &self.mode {
            PacerMode::Tfrc(st) => Some(st),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pacer_specs_parse() {
        assert_eq!("line".parse(), Ok(PacerConfig::Line));
        assert_eq!(
            "fixed:1000000".parse(),
            Ok(PacerConfig::Fixed {
                rate_bps: 1_000_000
            })
        );
        assert_eq!(
            "tfrc".parse::<PacerConfig>().unwrap().to_string(),
            format!("tfrc:{DEFAULT_TFRC_MAX_BPS}")
        );
        assert!(matches!(
            "tfrc:5000".parse(),
            Ok(PacerConfig::Tfrc {
                max_rate_bps: 5000,
                ..
            })
        ));
        for bad in [
            "",
            "fixed",
            "fixed:0",
            "fixed:-1",
            "fixed:1.5",
            "line:3",
            "tfrc:",
            "LINE",
            "fast",
        ] {
            assert!(bad.parse::<PacerConfig>().is_err(), "{bad}");
        }
        for cfg in [PacerConfig::Line, PacerConfig::Fixed { rate_bps: 42 }] {
            assert_eq!(cfg.to_string().parse(), Ok(cfg));
        }
    }

    #[test]
    fn line_rate_never_delays() {
        let mut p = Pacer::line_rate();
        for i in 0..100u64 {
            let now = Timestamp(i * 7);
            assert_eq!(p.earliest_send(65000, now), now);
        }
    }

    #[test]
    fn fixed_rate_steady_state_spacing() {
        let mut p = Pacer::new(
            PacerMode::Fixed {
                rate_bps: 1_000_000,
            },
            8 * 1250,
        );
        let mut times = Vec::new();
        for _ in 0..50 {
            times.push(p.earliest_send(1250, Timestamp::ZERO));
        }
        // First eight drain the full bucket, then one every 10 ms.
        assert!(times[..8].iter().all(|t| *t == Timestamp::ZERO));
        for w in times[8..].windows(2) {
            assert_eq!(w[1].0 - w[0].0, 10_000_000);
        }
        assert_eq!(times[8], Timestamp(10_000_000));
    }

    #[test]
    fn idle_time_refills_up_to_cap() {
        let mut p = Pacer::new(PacerMode::Fixed { rate_bps: 8000 }, 100);
        assert_eq!(p.earliest_send(100, Timestamp::ZERO), Timestamp::ZERO);
        // 1000 bytes/s: 100 bytes takes 0.1 s.
        assert_eq!(
            p.earliest_send(100, Timestamp::ZERO),
            Timestamp(100_000_000)
        );
        let later = Timestamp(10_000_000_000);
        assert_eq!(p.earliest_send(100, later), later);
        assert_eq!(
            p.earliest_send(100, later),
            Timestamp(later.0 + 100_000_000)
        );
    }
}
