//! Fluid AIMD model of a single Reno-style TCP flow over a drop-tail link.
//!
//! The window is ACK-clocked: slow start adds one segment per delivered
//! segment (doubling per RTT), congestion avoidance adds `1/cwnd` per
//! delivered segment (one per RTT). A loss is noticed one RTT after it
//! happens. With at least four segments outstanding it is repaired by fast
//! retransmit and the window halves; otherwise the flow waits out a
//! retransmission timeout and restarts from one segment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SimError, SimLinkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcpRefConfig {
    /// Payload bytes per segment.
    pub mss: u32,
    /// TCP/IP header bytes per segment.
    pub header_bytes: u32,
    pub initial_cwnd: f64,
    pub initial_ssthresh: f64,
    /// Lower bound on the retransmission timeout, seconds.
    pub min_rto_s: f64,
    /// Integration step, seconds.
    pub step_s: f64,
    /// Spacing of trace samples, seconds.
    pub sample_interval_s: f64,
}

impl Default for TcpRefConfig {
    fn default() -> Self {
        Self {
            mss: 1460,
            header_bytes: 40,
            initial_cwnd: 1.0,
            initial_ssthresh: 64.0,
            min_rto_s: 1.0,
            step_s: 0.001,
            sample_interval_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TcpPhase {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
    /// Waiting for the retransmission timer; nothing is sent.
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcpSample {
    pub time_s: f64,
    /// Rate the sender pushes into the network, bits/s on the wire.
    pub send_rate_bps: f64,
    pub cwnd: f64,
    pub queue_pkts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcpRefState {
    pub cwnd: f64,
    pub ssthresh: f64,
    /// Current round-trip time including queueing, seconds.
    pub rtt: f64,
    pub phase: TcpPhase,
    pub trace: Vec<TcpSample>,
    pub duration_s: f64,
    /// Payload bytes that reached the receiver intact.
    pub goodput_bytes: f64,
    pub queue_drops: u64,
    pub random_losses: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
}

impl TcpRefState {
    /// Goodput as a fraction of link capacity.
    pub fn utilization(&self, link: &SimLinkConfig) -> f64 {
        if self.duration_s <= 0.0 {
            return 0.0;
        }
        (self.goodput_bytes * 8.0 / (link.rate_bps as f64 * self.duration_s)).clamp(0.0, 1.0)
    }

    /// Number of times the send rate rises above `level` bits/s.
    pub fn peaks_above(&self, level: f64) -> usize {
        let mut above = false;
        let mut peaks = 0;
        for s in &self.trace {
            if s.send_rate_bps > level {
                if !above {
                    peaks += 1;
                }
                above = true;
            } else {
                above = false;
            }
        }
        peaks
    }
}

/// Runs the reference flow for `duration_s` simulated seconds.
pub fn run_tcp_reference(
    link: &SimLinkConfig,
    tcp: &TcpRefConfig,
    duration_s: f64,
) -> Result<TcpRefState, SimError> {
    link.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(SimError::InvalidConfig("duration must be positive"));
    }
    if tcp.step_s <= 0.0 || tcp.sample_interval_s <= 0.0 || tcp.mss == 0 {
        return Err(SimError::InvalidConfig(
            "tcp model parameters must be positive",
        ));
    }
    Ok(simulate(link, tcp, duration_s, None))
}

/// Same as [`run_tcp_reference`] but with an explicit queue capacity, which
/// may be infinite.
pub fn run_tcp_reference_with_queue(
    link: &SimLinkConfig,
    tcp: &TcpRefConfig,
    duration_s: f64,
    queue_cap: f64,
) -> Result<TcpRefState, SimError> {
    link.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(SimError::InvalidConfig("duration must be positive"));
    }
    Ok(simulate(link, tcp, duration_s, Some(queue_cap)))
}

fn simulate(
    link: &SimLinkConfig,
    tcp: &TcpRefConfig,
    duration_s: f64,
    queue_cap: Option<f64>,
) -> TcpRefState {
    let mut rng = ChaCha8Rng::seed_from_u64(link.seed);
    let wire_bits = (tcp.mss + tcp.header_bytes) as f64 * 8.0;
    // link capacity in segments per second
    let capacity = link.rate_bps as f64 / wire_bits;
    let base_rtt = link.round_trip_s();
    let queue_cap = queue_cap.unwrap_or(link.queue_len as f64);
    let dt = tcp.step_s;

    let mut st = TcpRefState {
        cwnd: tcp.initial_cwnd.max(1.0),
        ssthresh: tcp.initial_ssthresh,
        rtt: base_rtt,
        phase: TcpPhase::SlowStart,
        trace: Vec::new(),
        duration_s,
        goodput_bytes: 0.0,
        queue_drops: 0,
        random_losses: 0,
        fast_retransmits: 0,
        timeouts: 0,
    };

    let mut queue = 0.0f64;
    // fractional segments carried between steps
    let mut delivered_frac = 0.0f64;
    let mut overflow_frac = 0.0f64;
    // time at which a pending loss is noticed
    let mut loss_noticed_at: Option<f64> = None;
    // losses before this time belong to the last reduction
    let mut recovery_until = f64::NEG_INFINITY;
    let mut timeout_until = 0.0f64;
    let mut next_sample = 0.0f64;
    let steps = (duration_s / dt).ceil() as u64;

    for i in 0..steps {
        let t = i as f64 * dt;
        st.rtt = base_rtt + queue / capacity;

        if st.phase == TcpPhase::Timeout && t >= timeout_until {
            st.phase = TcpPhase::SlowStart;
            st.cwnd = 1.0;
            recovery_until = t + st.rtt;
        }
        if st.phase == TcpPhase::FastRecovery && t >= recovery_until {
            st.phase = TcpPhase::CongestionAvoidance;
        }

        if let Some(at) = loss_noticed_at {
            if t >= at {
                loss_noticed_at = None;
                if at >= recovery_until && st.phase != TcpPhase::Timeout {
                    st.ssthresh = (st.cwnd / 2.0).max(2.0);
                    if st.cwnd >= 4.0 {
                        st.cwnd = st.ssthresh;
                        st.phase = TcpPhase::FastRecovery;
                        st.fast_retransmits += 1;
                        recovery_until = t + st.rtt;
                    } else {
                        st.cwnd = 1.0;
                        st.phase = TcpPhase::Timeout;
                        st.timeouts += 1;
                        timeout_until = t + tcp.min_rto_s.max(2.0 * st.rtt);
                        recovery_until = timeout_until;
                    }
                }
            }
        }

        let send_rate = if st.phase == TcpPhase::Timeout {
            0.0
        } else {
            st.cwnd / st.rtt
        };

        if t >= next_sample {
            st.trace.push(TcpSample {
                time_s: t,
                send_rate_bps: send_rate * wire_bits,
                cwnd: st.cwnd,
                queue_pkts: queue,
            });
            next_sample += tcp.sample_interval_s;
        }

        // fluid queue
        let arriving = send_rate * dt;
        let service = capacity * dt;
        let backlog = queue + arriving;
        let out = backlog.min(service);
        let mut next_q = backlog - out;
        let mut lost_this_step = false;
        if next_q > queue_cap {
            overflow_frac += next_q - queue_cap;
            next_q = queue_cap;
            lost_this_step = true;
        }
        queue = next_q;
        if overflow_frac >= 1.0 {
            st.queue_drops += overflow_frac.floor() as u64;
            overflow_frac = overflow_frac.fract();
        }

        // whole segments leaving the link, each subject to random loss
        delivered_frac += out;
        let mut acked = 0.0;
        while delivered_frac >= 1.0 {
            delivered_frac -= 1.0;
            if link.loss_prob > 0.0 && rng.random::<f64>() < link.loss_prob {
                st.random_losses += 1;
                lost_this_step = true;
            } else {
                acked += 1.0;
            }
        }
        st.goodput_bytes += acked * tcp.mss as f64;

        if lost_this_step && loss_noticed_at.is_none() {
            loss_noticed_at = Some(t + st.rtt);
        }

        match st.phase {
            TcpPhase::SlowStart => {
                st.cwnd += acked;
                if st.cwnd >= st.ssthresh {
                    st.phase = TcpPhase::CongestionAvoidance;
                }
            }
            TcpPhase::CongestionAvoidance => st.cwnd += acked / st.cwnd,
            TcpPhase::FastRecovery | TcpPhase::Timeout => {}
        }
    }
    st
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unlimited_queue_converges_to_link_rate_without_sawtooth() {
        let link = SimLinkConfig::default();
        let st =
            run_tcp_reference_with_queue(&link, &TcpRefConfig::default(), 300.0, f64::INFINITY)
                .unwrap();
        assert_eq!(st.fast_retransmits + st.timeouts, 0);
        let tail: Vec<f64> = st
            .trace
            .iter()
            .rev()
            .take(100)
            .map(|s| s.send_rate_bps)
            .collect();
        for r in tail {
            assert!((r - 128_000.0).abs() / 128_000.0 < 0.02, "{r}");
        }
    }

    #[test]
    fn queue_limited_link_saws() {
        let link = SimLinkConfig::default();
        let st = run_tcp_reference(&link, &TcpRefConfig::default(), 120.0).unwrap();
        assert!(st.queue_drops > 0);
        assert!(st.fast_retransmits >= 2);
        assert!(st.utilization(&link) < 1.0);
    }

    #[test]
    fn deterministic_across_seeds_without_random_loss() {
        let a = run_tcp_reference(
            &SimLinkConfig::default().with_seed(1),
            &TcpRefConfig::default(),
            60.0,
        )
        .unwrap();
        let b = run_tcp_reference(
            &SimLinkConfig::default().with_seed(2),
            &TcpRefConfig::default(),
            60.0,
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
