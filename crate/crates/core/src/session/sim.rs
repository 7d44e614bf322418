//! Drives a sender and a receiver session against each other over two
//! simulated links, one per direction.
//!
//! Each side owns an interface queue in front of its outgoing link. Packets
//! leave the session with an earliest send time and wait in the queue until
//! both that time has come and the link interface has room, so an unpaced
//! sender is held back exactly as a blocking socket would hold it back.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::holes::ByteRange;
use crate::netsim::{EventQueue, LinkOutcome, LinkStats, SimLink, SimLinkConfig};
use crate::time::{secs, Timestamp};
use crate::trace::{Side, Trace};
use crate::wire::{decode_packet, encode_packet, Direction, Packet};

use super::{
    sha256_source, AbortReason, Action, ByteSource, Event, ReceiverSession, ReceiverState,
    SenderSession, SessionConfig, SyntheticSource, TimerId, TransferReport,
};

/// IPv4 plus UDP header bytes added to every datagram on a simulated link.
pub const IP_UDP_OVERHEAD: usize = 28;

/// Harness settings for a simulated transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub session: SessionConfig,
    /// `Put`: the sender opens the transfer. `Get`: the receiver requests it.
    pub direction: Direction,
    pub session_id: u32,
    pub path: String,
    /// Give up after this much simulated time.
    pub max_duration: Duration,
    /// Record every event and action.
    pub trace: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            direction: Direction::Put,
            session_id: 1,
            path: "sim.bin".into(),
            max_duration: Duration::from_secs(3600),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransferFailed {
    #[error("{side:?} aborted: {reason}")]
    Aborted { side: Side, reason: AbortReason },
    #[error("transfer unfinished after {seconds} simulated seconds")]
    Deadline { seconds: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl TransferFailed {
    pub fn abort_reason(&self) -> Option<&AbortReason> {
        match self {
            TransferFailed::Aborted { reason, .. } => Some(reason),
            _ => None,
        }
    }
}

/// Everything a simulated transfer produced.
#[derive(Debug, Clone)]
pub struct TransferRun {
    pub result: Result<TransferReport, TransferFailed>,
    pub sender: TransferReport,
    pub receiver: TransferReport,
    pub forward: LinkStats,
    pub reverse: LinkStats,
    /// Data-direction deliveries: arrival time and wire bytes.
    pub arrivals: Vec<(Timestamp, usize)>,
    /// Data-direction interface occupancy after each enqueue.
    pub occupancy: Vec<(Timestamp, usize)>,
    pub ended_at: Timestamp,
    pub trace: Option<Trace>,
}

/// Simulated file transfer. The reverse link is a copy of `link` with a
/// derived seed.
pub fn run_transfer(
    link: &SimLinkConfig,
    source: Box<dyn ByteSource>,
    cfg: &TransferConfig,
) -> Result<TransferReport, TransferFailed> {
    run_transfer_detailed(link, source, cfg).result
}

pub fn run_transfer_detailed(
    link: &SimLinkConfig,
    mut source: Box<dyn ByteSource>,
    cfg: &TransferConfig,
) -> TransferRun {
    let mut sim = match Sim::new(link, cfg.session, cfg.trace) {
        Ok(s) => s,
        Err(e) => return TransferRun::failed_early(e),
    };
    let digest = match sha256_source(source.as_mut()) {
        Ok(d) => d,
        Err(e) => {
            return TransferRun::failed_early(TransferFailed::Aborted {
                side: Side::Sender,
                reason: AbortReason::SourceError {
                    detail: e.to_string(),
                },
            })
        }
    };
    let put = cfg.direction == Direction::Put;
    let sender = SenderSession::file(
        cfg.session_id,
        source,
        digest,
        cfg.path.clone(),
        put,
        cfg.session,
    );
    let receiver = if put {
        ReceiverSession::put(cfg.session_id, cfg.session)
    } else {
        ReceiverSession::get(cfg.session_id, cfg.path.clone(), cfg.session)
    };
    sim.sender = Some(sender);
    sim.receiver = Some(receiver);
    sim.start();
    sim.run(Timestamp::ZERO + cfg.max_duration);
    sim.finish()
}

/// Live byte feed for a stream: `rate_bps` of deterministic content, handed
/// over in `chunk`-byte pieces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamFeed {
    pub rate_bps: u64,
    pub chunk: usize,
    pub seed: u64,
}

impl StreamFeed {
    pub fn source(&self) -> SyntheticSource {
        SyntheticSource::new(u128::MAX, self.seed)
    }

    fn interval(&self) -> Duration {
        Duration::from_nanos(
            (self.chunk as u128 * 8 * 1_000_000_000).div_ceil(self.rate_bps as u128) as u64,
        )
    }
}

#[derive(Debug, Clone)]
pub struct StreamRun {
    pub result: Result<TransferReport, TransferFailed>,
    pub sender: TransferReport,
    /// Bytes the feed produced.
    pub fed: u128,
    /// In-order bytes the receiver handed to the application, with their
    /// starting offsets; consecutive entries skip only over `gaps`.
    pub delivered: Vec<(u128, Vec<u8>)>,
    pub gaps: Vec<ByteRange>,
    pub trace: Option<Trace>,
}

impl StreamRun {
    pub fn delivered_bytes(&self) -> u128 {
        self.delivered.iter().map(|(_, b)| b.len() as u128).sum()
    }
}

/// Feeds a stream for `duration` simulated seconds, closes it, and runs
/// until the receiver has everything it is going to get.
pub fn run_stream(
    link: &SimLinkConfig,
    feed: StreamFeed,
    duration: Duration,
    cfg: &TransferConfig,
) -> StreamRun {
    let fail = |e: TransferFailed| StreamRun {
        result: Err(e),
        sender: TransferReport::new(0, 0, Duration::ZERO, 0, false),
        fed: 0,
        delivered: Vec::new(),
        gaps: Vec::new(),
        trace: None,
    };
    if feed.rate_bps == 0 || feed.chunk == 0 {
        return fail(TransferFailed::InvalidConfig(
            "stream feed rate and chunk must be positive".into(),
        ));
    }
    let mut sim = match Sim::new(link, cfg.session, cfg.trace) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    sim.sender = Some(SenderSession::stream(
        cfg.session_id,
        cfg.path.clone(),
        cfg.session,
    ));
    sim.receiver = Some(ReceiverSession::put(cfg.session_id, cfg.session));
    sim.collect_sink = true;

    let end = Timestamp::ZERO + duration;
    let step = feed.interval();
    let mut t = Timestamp::ZERO;
    while t < end {
        sim.queue.push(t, Item::Feed);
        t = t + step;
    }
    sim.queue.push(end, Item::FeedEnd);
    sim.feed = Some((feed.source(), feed.chunk));
    sim.start();
    sim.run(end + cfg.max_duration);

    let fed = sim.fed;
    let delivered = std::mem::take(&mut sim.sink);
    let gaps = sim
        .receiver
        .as_ref()
        .map(|r| r.gaps().to_vec())
        .unwrap_or_default();
    let run = sim.finish();
    StreamRun {
        result: run.result,
        sender: run.sender,
        fed,
        delivered,
        gaps,
        trace: run.trace,
    }
}

enum Item {
    Deliver {
        to: Side,
        bytes: Vec<u8>,
    },
    Timer {
        side: Side,
        timer: TimerId,
        deadline: Timestamp,
    },
    Pump(Side),
    Feed,
    FeedEnd,
}

struct Port {
    link: SimLink,
    outbox: VecDeque<(Packet, Timestamp)>,
    pump_at: Option<Timestamp>,
    timers: BTreeMap<TimerId, Timestamp>,
    // a Transmit timer came due while the interface was busy
    transmit_waiting: bool,
}

impl Port {
    fn new(link: SimLink) -> Self {
        Self {
            link,
            outbox: VecDeque::new(),
            pump_at: None,
            timers: BTreeMap::new(),
            transmit_waiting: false,
        }
    }
}

struct Sim {
    cfg: SessionConfig,
    queue: EventQueue<Item>,
    sender: Option<SenderSession>,
    receiver: Option<ReceiverSession>,
    ports: [Port; 2],
    trace: Option<Trace>,
    sender_end: Option<(Timestamp, Result<TransferReport, AbortReason>)>,
    receiver_end: Option<(Timestamp, Result<TransferReport, AbortReason>)>,
    arrivals: Vec<(Timestamp, usize)>,
    occupancy: Vec<(Timestamp, usize)>,
    feed: Option<(SyntheticSource, usize)>,
    fed: u128,
    collect_sink: bool,
    sink: Vec<(u128, Vec<u8>)>,
}

fn idx(side: Side) -> usize {
    match side {
        Side::Sender => 0,
        Side::Receiver => 1,
    }
}

fn peer(side: Side) -> Side {
    match side {
        Side::Sender => Side::Receiver,
        Side::Receiver => Side::Sender,
    }
}

impl Sim {
    fn new(link: &SimLinkConfig, cfg: SessionConfig, trace: bool) -> Result<Self, TransferFailed> {
        cfg.validate()
            .map_err(|e| TransferFailed::InvalidConfig(e.to_string()))?;
        let fwd = SimLink::new(*link).map_err(|e| TransferFailed::InvalidConfig(e.to_string()))?;
        let rev_cfg = link.with_seed(link.seed ^ 0x9e37_79b9_7f4a_7c15);
        let rev =
            SimLink::new(rev_cfg).map_err(|e| TransferFailed::InvalidConfig(e.to_string()))?;
        Ok(Self {
            cfg,
            queue: EventQueue::new(),
            sender: None,
            receiver: None,
            ports: [Port::new(fwd), Port::new(rev)],
            trace: trace.then(Trace::default),
            sender_end: None,
            receiver_end: None,
            arrivals: Vec::new(),
            occupancy: Vec::new(),
            feed: None,
            fed: 0,
            collect_sink: false,
            sink: Vec::new(),
        })
    }

    fn start(&mut self) {
        self.dispatch(
            Side::Receiver,
            Event::Start {
                now: Timestamp::ZERO,
            },
        );
        self.dispatch(
            Side::Sender,
            Event::Start {
                now: Timestamp::ZERO,
            },
        );
    }

    fn done(&self) -> bool {
        let sender_over = self.sender_end.is_some();
        let receiver_over = self.receiver_end.is_some();
        let receiver_failed = matches!(self.receiver_end, Some((_, Err(_))));
        let sender_failed = matches!(self.sender_end, Some((_, Err(_))));
        let receiver_complete = self
            .receiver
            .as_ref()
            .is_some_and(|r| r.state() == ReceiverState::Complete);
        (sender_over && receiver_over) || receiver_failed || (sender_failed && !receiver_complete)
    }

    fn run(&mut self, deadline: Timestamp) {
        while !self.done() {
            let Some(at) = self.queue.peek_time() else {
                break;
            };
            if at > deadline {
                break;
            }
            let (now, item) = self.queue.pop().unwrap();
            match item {
                Item::Deliver { to, bytes } => {
                    if let Ok(packet) = decode_packet(&bytes, &self.cfg.wire) {
                        self.dispatch(to, Event::PacketArrived { packet, now });
                    }
                }
                Item::Timer {
                    side,
                    timer,
                    deadline,
                } => {
                    let port = &mut self.ports[idx(side)];
                    if port.timers.get(&timer) != Some(&deadline) {
                        continue;
                    }
                    port.timers.remove(&timer);
                    if timer == TimerId::Transmit && !self.interface_free(side, now) {
                        continue;
                    }
                    self.dispatch(side, Event::TimerFired { timer, now });
                }
                Item::Pump(side) => {
                    if self.ports[idx(side)].pump_at == Some(now) {
                        self.ports[idx(side)].pump_at = None;
                    }
                    self.pump(side, now);
                }
                Item::Feed => {
                    if let Some((src, chunk)) = self.feed {
                        let mut bytes = vec![0u8; chunk];
                        for (i, b) in bytes.iter_mut().enumerate() {
                            *b = src.byte_at(self.fed + i as u128);
                        }
                        self.fed += chunk as u128;
                        self.dispatch(Side::Sender, Event::StreamData { bytes, now });
                    }
                }
                Item::FeedEnd => self.dispatch(Side::Sender, Event::StreamEnd { now }),
            }
        }
    }

    /// True when a pending Transmit may run now; otherwise parks it until
    /// the interface drains.
    fn interface_free(&mut self, side: Side, now: Timestamp) -> bool {
        let port = &mut self.ports[idx(side)];
        if !port.outbox.is_empty() {
            port.transmit_waiting = true;
            return false;
        }
        let ready = port.link.ready_at(now);
        if ready > now {
            port.timers.insert(TimerId::Transmit, ready);
            self.queue.push(
                ready,
                Item::Timer {
                    side,
                    timer: TimerId::Transmit,
                    deadline: ready,
                },
            );
            return false;
        }
        true
    }

    fn dispatch(&mut self, side: Side, event: Event) {
        let now = event.now();
        if let Some(t) = &mut self.trace {
            t.event(side, &event);
        }
        let actions = match side {
            Side::Sender => match &mut self.sender {
                Some(s) => s.on_event(event),
                None => return,
            },
            Side::Receiver => match &mut self.receiver {
                Some(r) => r.on_event(event),
                None => return,
            },
        };
        if let Some(t) = &mut self.trace {
            t.actions(side, &actions);
        }
        let mut sent = false;
        for a in actions {
            match a {
                Action::SendPacket { packet, earliest } => {
                    self.ports[idx(side)]
                        .outbox
                        .push_back((packet, earliest.max(now)));
                    sent = true;
                }
                Action::SetTimer { timer, deadline } => {
                    let port = &mut self.ports[idx(side)];
                    if timer == TimerId::Transmit {
                        port.transmit_waiting = false;
                    }
                    port.timers.insert(timer, deadline);
                    self.queue.push(
                        deadline,
                        Item::Timer {
                            side,
                            timer,
                            deadline,
                        },
                    );
                }
                Action::WriteSink { offset, bytes } => {
                    if self.collect_sink && side == Side::Receiver {
                        self.sink.push((offset, bytes));
                    }
                }
                Action::ReadSource { .. } => {}
                Action::Finished { report } => self.set_end(side, now, Ok(report)),
                Action::Abort { reason } => self.set_end(side, now, Err(reason)),
            }
        }
        if sent {
            self.pump(side, now);
        }
    }

    fn set_end(&mut self, side: Side, now: Timestamp, r: Result<TransferReport, AbortReason>) {
        let slot = match side {
            Side::Sender => &mut self.sender_end,
            Side::Receiver => &mut self.receiver_end,
        };
        if slot.is_none() {
            *slot = Some((now, r));
        }
    }

    fn schedule_pump(&mut self, side: Side, at: Timestamp) {
        let port = &mut self.ports[idx(side)];
        if port.pump_at.is_some_and(|p| p <= at) {
            return;
        }
        port.pump_at = Some(at);
        self.queue.push(at, Item::Pump(side));
    }

    /// Moves queued packets onto the link while the interface accepts them.
    fn pump(&mut self, side: Side, now: Timestamp) {
        let wire = self.cfg.wire;
        loop {
            let port = &mut self.ports[idx(side)];
            let Some((_, earliest)) = port.outbox.front() else {
                break;
            };
            let earliest = *earliest;
            if earliest > now {
                self.schedule_pump(side, earliest);
                return;
            }
            let ready = port.link.ready_at(now);
            if ready > now {
                self.schedule_pump(side, ready);
                return;
            }
            let (packet, _) = port.outbox.pop_front().unwrap();
            let bytes = match encode_packet(&packet, &wire) {
                Ok(b) => b,
                // sessions only build valid packets; anything else is a bug
                Err(e) => panic!("session produced an unencodable packet: {e}"),
            };
            let size = bytes.len() + IP_UDP_OVERHEAD;
            let outcome = port.link.link_send(size, now);
            if side == Side::Sender {
                let occ = port.link.occupancy(now);
                self.occupancy.push((now, occ));
            }
            if let LinkOutcome::Delivered { arrival, .. } = outcome {
                if side == Side::Sender {
                    self.arrivals.push((arrival, size));
                }
                self.queue.push(
                    arrival,
                    Item::Deliver {
                        to: peer(side),
                        bytes,
                    },
                );
            }
        }
        let port = &mut self.ports[idx(side)];
        if port.transmit_waiting {
            port.transmit_waiting = false;
            let at = port.link.ready_at(now);
            port.timers.insert(TimerId::Transmit, at);
            self.queue.push(
                at,
                Item::Timer {
                    side,
                    timer: TimerId::Transmit,
                    deadline: at,
                },
            );
        }
    }

    fn finish(self) -> TransferRun {
        let now = self.queue.now();
        let sender = self
            .sender
            .as_ref()
            .map(|s| s.report(now))
            .unwrap_or_else(|| TransferReport::new(0, 0, Duration::ZERO, 0, false));
        let receiver = self
            .receiver
            .as_ref()
            .map(|r| r.report(now))
            .unwrap_or_else(|| TransferReport::new(0, 0, Duration::ZERO, 0, false));
        let receiver_complete = self
            .receiver
            .as_ref()
            .is_some_and(|r| r.state() == ReceiverState::Complete);

        let result = if receiver_complete {
            // what the data direction cost: receiver's unique bytes, the
            // sender's retransmissions, time to receiver completion
            let mut r = TransferReport::new(
                receiver.unique_bytes,
                sender.retransmitted_bytes,
                secs(receiver.duration_s),
                receiver.status_packets,
                receiver.digest_ok,
            );
            r.gap_bytes = receiver.gap_bytes;
            Ok(r)
        } else if let Some((_, Err(reason))) = &self.receiver_end {
            Err(TransferFailed::Aborted {
                side: Side::Receiver,
                reason: reason.clone(),
            })
        } else if let Some((_, Err(reason))) = &self.sender_end {
            Err(TransferFailed::Aborted {
                side: Side::Sender,
                reason: reason.clone(),
            })
        } else {
            Err(TransferFailed::Deadline {
                seconds: now.as_secs_f64(),
            })
        };
        TransferRun {
            result,
            sender,
            receiver,
            forward: self.ports[0].link.stats(),
            reverse: self.ports[1].link.stats(),
            arrivals: self.arrivals,
            occupancy: self.occupancy,
            ended_at: now,
            trace: self.trace,
        }
    }
}

impl TransferRun {
    fn failed_early(e: TransferFailed) -> Self {
        let empty = TransferReport::new(0, 0, Duration::ZERO, 0, false);
        Self {
            result: Err(e),
            sender: empty.clone(),
            receiver: empty,
            forward: LinkStats::default(),
            reverse: LinkStats::default(),
            arrivals: Vec::new(),
            occupancy: Vec::new(),
            ended_at: Timestamp::ZERO,
            trace: None,
        }
    }
}
