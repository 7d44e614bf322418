//! Sender-side TCP-friendly rate control driven by SNACK feedback.
//!
//! Loss events are inferred from new holes in Status packets, so the
//! receiver runs unmodified. The throughput equation is the standard TFRC
//! one with `b = 1` and `t_RTO = 4R`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

/// Number of loss intervals kept for the average.
pub const LOSS_HISTORY: usize = 8;

/// Weights applied to the loss intervals, most recent first.
pub const LOSS_WEIGHTS: [f64; LOSS_HISTORY] = [1.0, 1.0, 1.0, 1.0, 0.8, 0.6, 0.4, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfrcState {
    /// Segment size in bytes.
    pub s: f64,
    /// Smoothed round-trip time in seconds.
    pub rtt: f64,
    /// Loss-event rate in `[0, 1]`.
    pub p: f64,
    /// Retransmission timeout in seconds, kept at `4 * rtt`.
    pub t_rto: f64,
    /// Allowed sending rate in bytes per second.
    pub x: f64,
    /// Upper bound on `x` in bytes per second.
    pub x_max: f64,
    /// Closed loss-interval lengths in packets, most recent first.
    pub loss_intervals: VecDeque<f64>,
    /// Packets since the most recent loss event.
    pub open_interval: f64,
    rtt_sampled: bool,
    last_loss_event: Option<Timestamp>,
    last_feedback: Option<Timestamp>,
}

impl TfrcState {
    /// Starts at four segments per initial RTT, capped at `x_max`.
    pub fn new(segment_size: f64, x_max: f64, initial_rtt: f64) -> Self {
        let rtt = initial_rtt.max(1e-6);
        Self {
            s: segment_size.max(1.0),
            rtt,
            p: 0.0,
            t_rto: 4.0 * rtt,
            x: (4.0 * segment_size / rtt).min(x_max),
            x_max,
            loss_intervals: VecDeque::with_capacity(LOSS_HISTORY),
            open_interval: 0.0,
            rtt_sampled: false,
            last_loss_event: None,
            last_feedback: None,
        }
    }

    /// Lowest rate ever allowed: one segment per 64 seconds.
    pub fn x_min(&self) -> f64 {
        self.s / 64.0
    }

    /// Folds one round of SNACK feedback into the state and recomputes the
    /// allowed rate.
    pub fn on_feedback(
        &mut self,
        rtt_sample: Option<f64>,
        new_loss_events: u64,
        packets_since_last: u64,
        now: Timestamp,
    ) {
        if let Some(sample) = rtt_sample.filter(|s| s.is_finite() && *s > 0.0) {
            self.rtt = if self.rtt_sampled {
                0.9 * self.rtt + 0.1 * sample
            } else {
                sample
            };
            self.rtt_sampled = true;
            self.t_rto = 4.0 * self.rtt;
        }

        let span = self
            .last_feedback
            .map(|lf| (now - lf).as_secs_f64())
            .filter(|s| *s > 0.0)
            .unwrap_or(self.rtt);
        let packets = packets_since_last as f64;
        let measured = packets * self.s / span;

        if new_loss_events == 0 {
            self.open_interval += packets;
        } else {
            // At most one loss event per RTT.
            let mut events = new_loss_events.min(((span / self.rtt).floor() as u64).max(1));
            if self
                .last_loss_event
                .is_some_and(|t| (now - t).as_secs_f64() < self.rtt)
            {
                events -= 1;
            }
            if events == 0 {
                self.open_interval += packets;
            } else if self.loss_intervals.is_empty() {
                let current = if measured > 0.0 { measured } else { self.x };
                let p0 = invert_throughput(self, current / 2.0);
                self.loss_intervals.push_front(1.0 / p0);
                self.open_interval = 0.0;
                self.last_loss_event = Some(now);
            } else {
                let each = ((self.open_interval + packets) / events as f64).max(1.0);
                for _ in 0..events {
                    self.loss_intervals.push_front(each);
                }
                self.loss_intervals.truncate(LOSS_HISTORY);
                self.open_interval = 0.0;
                self.last_loss_event = Some(now);
            }
        }

        self.p = self.loss_event_rate();
        let target = tfrc_throughput(self);
        let x = target.clamp(self.x / 2.0, self.x * 2.0);
        self.x = x.min(self.x_max).max(self.x_min());
        self.last_feedback = Some(now);
    }

    /// Weighted-average loss interval turned into a loss-event rate. The
    /// open interval is counted when doing so lowers the rate.
    pub fn loss_event_rate(&self) -> f64 {
        if self.loss_intervals.is_empty() {
            return 0.0;
        }
        let closed: Vec<f64> = self.loss_intervals.iter().copied().collect();
        let mut with_open = vec![self.open_interval];
        with_open.extend(closed.iter().take(LOSS_HISTORY - 1));
        let mean = weighted_mean(&closed).max(weighted_mean(&with_open));
        if mean <= 0.0 {
            1.0
        } else {
            (1.0 / mean).min(1.0)
        }
    }
}

fn weighted_mean(intervals: &[f64]) -> f64 {
    let n = intervals.len().min(LOSS_HISTORY);
    let (num, den) = intervals[..n]
        .iter()
        .zip(LOSS_WEIGHTS)
        .fold((0.0, 0.0), |(num, den), (i, w)| (num + i * w, den + w));
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Allowed throughput in bytes per second for the state's `s`, `rtt`, `p`
/// and `t_rto`.
pub fn tfrc_throughput(st: &TfrcState) -> f64 {
    throughput_at(st.s, st.rtt, st.p, st.t_rto, st.x_max)
}

pub(crate) fn throughput_at(s: f64, rtt: f64, p: f64, t_rto: f64, x_max: f64) -> f64 {
    if p <= 0.0 {
        return x_max;
    }
    let denom = rtt * (2.0 * p / 3.0).sqrt()
        + t_rto * (3.0 * (3.0 * p / 8.0).sqrt()) * p * (1.0 + 32.0 * p * p);
    (s / denom).min(x_max)
}

/// Loss-event rate at which the equation yields `target` bytes/s.
fn invert_throughput(st: &TfrcState, target: f64) -> f64 {
    let f = |p: f64| throughput_at(st.s, st.rtt, p, st.t_rto, f64::INFINITY);
    let (mut lo, mut hi) = (1e-12f64.ln(), 0.0f64);
    if f(1.0) >= target {
        return 1.0;
    }
    if f(1e-12) <= target {
        return 1e-12;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn state(s: f64, rtt: f64, p: f64) -> TfrcState {
        let mut st = TfrcState::new(s, f64::INFINITY, rtt);
        st.p = p;
        st
    }

    #[test]
    fn zero_loss_gives_cap() {
        let mut st = state(1460.0, 0.1, 0.0);
        st.x_max = 12345.0;
        assert_eq!(tfrc_throughput(&st), 12345.0);
    }

    #[test]
    fn reference_point() {
        // 1460 / (0.1*sqrt(0.02/3) + 0.4*3*sqrt(0.00375)*0.01*1.0032)
        let st = state(1460.0, 0.1, 0.01);
        let x = tfrc_throughput(&st);
        assert!((x - 164_005.0).abs() < 5.0, "{x}");
    }

    #[test]
    fn higher_loss_is_slower() {
        let a = tfrc_throughput(&state(1460.0, 0.1, 0.01));
        let b = tfrc_throughput(&state(1460.0, 0.1, 0.04));
        assert!(b < a);
    }

    #[test]
    fn lossless_feedback_doubles_at_most() {
        let mut st = TfrcState::new(1000.0, 1e6, 0.1);
        let mut now = Timestamp::ZERO;
        let mut prev = st.x;
        for _ in 0..20 {
            now = now + Duration::from_millis(100);
            st.on_feedback(Some(0.1), 0, 10, now);
            assert!(st.x <= 2.0 * prev + 1e-9);
            assert!(st.loss_intervals.is_empty());
            prev = st.x;
        }
        assert_eq!(st.x, 1e6);
    }

    #[test]
    fn first_loss_halves_rate() {
        let mut st = TfrcState::new(1000.0, 1e9, 0.1);
        let mut now = Timestamp::ZERO;
        // sender keeps up with its allowance, so the measured rate equals x
        for _ in 0..6 {
            now = now + Duration::from_millis(100);
            let pkts = (st.x * 0.1 / 1000.0).round() as u64;
            st.on_feedback(Some(0.1), 0, pkts, now);
        }
        let pkts = (st.x * 0.1 / 1000.0).round() as u64;
        let measured = pkts as f64 * 1000.0 / 0.1;
        now = now + Duration::from_millis(100);
        st.on_feedback(Some(0.1), 1, pkts, now);
        assert!(
            (st.x - measured / 2.0).abs() / measured < 1e-6,
            "{} vs {}",
            st.x,
            measured
        );
        assert_eq!(st.loss_intervals.len(), 1);
    }

    #[test]
    fn periodic_loss_converges_to_inverse_period() {
        let k = 50u64;
        let mut st = TfrcState::new(1000.0, 1e9, 0.1);
        let mut now = Timestamp::ZERO;
        for _ in 0..40 {
            now = now + Duration::from_millis(250);
            st.on_feedback(Some(0.1), 1, k, now);
        }
        assert!((st.p - 1.0 / k as f64).abs() < 1e-12, "{}", st.p);
    }

    #[test]
    fn losses_within_one_rtt_collapse() {
        let mut st = TfrcState::new(1000.0, 1e9, 0.5);
        let mut now = Timestamp::ZERO;
        now = now + Duration::from_millis(600);
        st.on_feedback(Some(0.5), 1, 100, now);
        let n = st.loss_intervals.len();
        now = now + Duration::from_millis(100);
        st.on_feedback(Some(0.5), 3, 20, now);
        assert_eq!(st.loss_intervals.len(), n);
        assert_eq!(st.open_interval, 20.0);
    }
}
