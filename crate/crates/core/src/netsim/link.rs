use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::time::{secs, Timestamp};

use super::SimError;

/// One direction of a simulated link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimLinkConfig {
    /// Serialisation rate in bits per second.
    pub rate_bps: u64,
    /// Propagation delay in seconds.
    pub one_way_delay_s: f64,
    /// Independent per-packet loss probability.
    pub loss_prob: f64,
    /// Packets the interface may hold, including the one on the wire.
    pub queue_len: usize,
    pub seed: u64,
}

impl Default for SimLinkConfig {
    fn default() -> Self {
        Self {
            rate_bps: 128_000,
            one_way_delay_s: 0.25,
            loss_prob: 0.0,
            queue_len: 20,
            seed: 0,
        }
    }
}

impl SimLinkConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.rate_bps == 0 {
            return Err(SimError::InvalidConfig("rate must be positive"));
        }
        if !(self.one_way_delay_s.is_finite() && self.one_way_delay_s >= 0.0) {
            return Err(SimError::InvalidConfig(
                "delay must be a non-negative number",
            ));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(SimError::InvalidConfig(
                "loss probability must lie in [0, 1]",
            ));
        }
        if self.queue_len == 0 {
            return Err(SimError::InvalidConfig("queue length must be at least 1"));
        }
        Ok(())
    }

    /// Same link with a different seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn round_trip_s(&self) -> f64 {
        2.0 * self.one_way_delay_s
    }
}

/// Decides whether a packet that made it through the queue is lost.
pub trait LossProcess: Send {
    fn lose(&mut self, rng: &mut ChaCha8Rng) -> bool;
}

/// Independent losses with fixed probability.
#[derive(Debug, Clone, Copy)]
pub struct Bernoulli(pub f64);

impl LossProcess for Bernoulli {
    fn lose(&mut self, rng: &mut ChaCha8Rng) -> bool {
        self.0 > 0.0 && rng.random::<f64>() < self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkOutcome {
    /// Serialised at `departure`, arrives at `arrival`.
    Delivered {
        departure: Timestamp,
        arrival: Timestamp,
    },
    /// Serialised but lost in transit.
    Lost { departure: Timestamp },
    /// Queue full; tail-dropped on arrival.
    Dropped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub offered: u64,
    pub delivered: u64,
    pub lost: u64,
    pub dropped: u64,
    pub delivered_bytes: u64,
    pub max_occupancy: usize,
}

/// Drop-tail FIFO interface feeding a fixed-rate, fixed-delay channel.
pub struct SimLink {
    cfg: SimLinkConfig,
    rng: ChaCha8Rng,
    loss: Box<dyn LossProcess>,
    // departure times of packets still in the interface
    departures: VecDeque<Timestamp>,
    stats: LinkStats,
}

impl SimLink {
    pub fn new(cfg: SimLinkConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        Ok(Self::with_loss(cfg, Box::new(Bernoulli(cfg.loss_prob))))
    }

    /// Link with a custom loss process in place of the Bernoulli default.
    pub fn with_loss(cfg: SimLinkConfig, loss: Box<dyn LossProcess>) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            loss,
            departures: VecDeque::new(),
            stats: LinkStats::default(),
        }
    }

    pub fn config(&self) -> &SimLinkConfig {
        &self.cfg
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    /// Time to clock `bytes` onto the wire, rounded up to the nanosecond.
    pub fn serialization_ns(&self, bytes: usize) -> u64 {
        let bits = bytes as u128 * 8 * 1_000_000_000;
        bits.div_ceil(self.cfg.rate_bps as u128) as u64
    }

    fn expire(&mut self, now: Timestamp) {
        while self.departures.front().is_some_and(|&d| d <= now) {
            self.departures.pop_front();
        }
    }

    /// Packets held by the interface at `now`.
    pub fn occupancy(&mut self, now: Timestamp) -> usize {
        self.expire(now);
        self.departures.len()
    }

    /// Earliest time at or after `now` when the interface has room.
    pub fn ready_at(&mut self, now: Timestamp) -> Timestamp {
        self.expire(now);
        let n = self.departures.len();
        if n < self.cfg.queue_len {
            now
        } else {
            self.departures[n - self.cfg.queue_len]
        }
    }

    /// Offers a `bytes`-long packet to the interface at `now`. Calls must come
    /// in non-decreasing `now` order.
    pub fn link_send(&mut self, bytes: usize, now: Timestamp) -> LinkOutcome {
        self.expire(now);
        self.stats.offered += 1;
        if self.departures.len() >= self.cfg.queue_len {
            self.stats.dropped += 1;
            return LinkOutcome::Dropped;
        }
        let start = self.departures.back().copied().unwrap_or(now).max(now);
        let departure = Timestamp(start.0 + self.serialization_ns(bytes));
        self.departures.push_back(departure);
        self.stats.max_occupancy = self.stats.max_occupancy.max(self.departures.len());
        if self.loss.lose(&mut self.rng) {
            self.stats.lost += 1;
            return LinkOutcome::Lost { departure };
        }
        self.stats.delivered += 1;
        self.stats.delivered_bytes += bytes as u64;
        LinkOutcome::Delivered {
            departure,
            arrival: departure + secs(self.cfg.one_way_delay_s),
        }
    }
}
