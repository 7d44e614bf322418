use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::holes::{ByteRange, HoleTracker};
use crate::time::Timestamp;
use crate::wire::{
    Body, Data, DescriptorWidth, Direction, Metadata, Packet, PacketHeader, Request, Status,
    DIGEST_LEN,
};

use super::{AbortReason, Action, Event, SessionConfig, TimerId, TransferMode, TransferReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReceiverState {
    AwaitingMetadata,
    Receiving,
    Complete,
    Failed,
}

/// Bytes that arrived ahead of the in-order point.
#[derive(Default)]
struct Reorder {
    next: u128,
    pending: BTreeMap<u128, Vec<u8>>,
}

impl Reorder {
    /// Accepts a chunk no byte of which was seen before and returns whatever
    /// became contiguous.
    fn push(&mut self, offset: u128, bytes: Vec<u8>) -> Vec<(u128, Vec<u8>)> {
        if offset != self.next {
            self.pending.insert(offset, bytes);
            return Vec::new();
        }
        self.next += bytes.len() as u128;
        let mut out = vec![(offset, bytes)];
        self.drain(&mut out);
        out
    }

    fn drain(&mut self, out: &mut Vec<(u128, Vec<u8>)>) {
        while let Some(entry) = self.pending.first_entry() {
            if *entry.key() != self.next {
                break;
            }
            let (off, b) = entry.remove_entry();
            self.next += b.len() as u128;
            out.push((off, b));
        }
    }

    /// Skips ahead to `floor`, returning the bytes released and the gaps
    /// jumped over.
    fn skip_to(&mut self, floor: u128) -> (Vec<(u128, Vec<u8>)>, Vec<ByteRange>) {
        let mut out = Vec::new();
        let mut gaps = Vec::new();
        while self.next < floor {
            match self.pending.first_key_value().map(|(&k, _)| k) {
                Some(k) if k == self.next => {
                    let (off, b) = self.pending.pop_first().unwrap();
                    self.next += b.len() as u128;
                    out.push((off, b));
                }
                Some(k) if k < floor => {
                    gaps.push(ByteRange::new(self.next, k));
                    self.next = k;
                }
                _ => {
                    gaps.push(ByteRange::new(self.next, floor));
                    self.next = floor;
                }
            }
        }
        self.drain(&mut out);
        (out, gaps)
    }
}

/// Receiving side of one transfer.
pub struct ReceiverSession {
    id: u32,
    cfg: SessionConfig,
    state: ReceiverState,
    // Some(path) when we initiate with a get Request
    get_path: Option<String>,
    // name announced in Metadata
    path: Option<String>,
    mode: TransferMode,
    width: DescriptorWidth,
    tracker: HoleTracker,
    expected_digest: [u8; DIGEST_LEN],
    hasher: Sha256,
    reorder: Reorder,
    digest_ok: bool,

    // stream bookkeeping
    stream_end: Option<u128>,
    poll_bound: u128,
    gaps: Vec<ByteRange>,
    gap_bytes: u128,

    started_at: Option<Timestamp>,
    completed_at: Option<Timestamp>,
    last_heard: Timestamp,
    last_status_at: Option<Timestamp>,
    unique_bytes: u128,
    duplicate_bytes: u128,
    status_sent: u64,
    terminal: bool,
}

impl ReceiverSession {
    /// Passive receiver for a transfer the peer pushes with `id`.
    pub fn put(id: u32, cfg: SessionConfig) -> Self {
        Self::build(id, None, cfg)
    }

    /// Receiver that asks the peer for `path`.
    pub fn get(id: u32, path: impl Into<String>, cfg: SessionConfig) -> Self {
        Self::build(id, Some(path.into()), cfg)
    }

    fn build(id: u32, get_path: Option<String>, cfg: SessionConfig) -> Self {
        Self {
            id,
            cfg,
            state: ReceiverState::AwaitingMetadata,
            get_path,
            path: None,
            mode: TransferMode::File,
            width: DescriptorWidth::W16,
            tracker: HoleTracker::with_size(0),
            expected_digest: [0; DIGEST_LEN],
            hasher: Sha256::new(),
            reorder: Reorder::default(),
            digest_ok: false,
            stream_end: None,
            poll_bound: 0,
            gaps: Vec::new(),
            gap_bytes: 0,
            started_at: None,
            completed_at: None,
            last_heard: Timestamp::ZERO,
            last_status_at: None,
            unique_bytes: 0,
            duplicate_bytes: 0,
            status_sent: 0,
            terminal: false,
        }
    }

    pub fn session_id(&self) -> u32 {
        self.id
    }

    pub fn state(&self) -> ReceiverState {
        self.state
    }

    pub fn mode(&self) -> TransferMode {
        self.mode
    }

    pub fn width(&self) -> DescriptorWidth {
        self.width
    }

    /// Path from the sender's Metadata, once it has arrived.
    pub fn path(&self) -> Option<&str> {
        self.path.as_deref()
    }

    /// Declared size of a file transfer, once Metadata has arrived.
    pub fn expected_size(&self) -> Option<u128> {
        match (self.state, self.mode) {
            (ReceiverState::AwaitingMetadata, _) | (_, TransferMode::Stream) => None,
            _ => self.tracker.expected_size(),
        }
    }

    pub fn tracker(&self) -> &HoleTracker {
        &self.tracker
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Stream ranges given up as unrecoverable, in order.
    pub fn gaps(&self) -> &[ByteRange] {
        &self.gaps
    }

    /// Progress point: the in-order delivery offset for streams, the
    /// contiguous prefix for files.
    pub fn progress(&self) -> u128 {
        match self.mode {
            TransferMode::File => self.tracker.contiguous_end(),
            TransferMode::Stream => self.reorder.next,
        }
    }

    pub fn report(&self, now: Timestamp) -> TransferReport {
        let end = self.completed_at.unwrap_or(now);
        let duration = self.started_at.map(|s| end - s).unwrap_or_default();
        let mut r = TransferReport::new(
            self.unique_bytes,
            self.duplicate_bytes,
            duration,
            self.status_sent,
            self.digest_ok,
        );
        if self.mode == TransferMode::Stream {
            r.gap_bytes = Some(self.gap_bytes);
        }
        r
    }

    pub fn on_event(&mut self, event: Event) -> Vec<Action> {
        let mut out = Vec::new();
        if self.terminal {
            return out;
        }
        match event {
            Event::Start { now } => self.on_start(now, &mut out),
            Event::PacketArrived { packet, now } => self.on_packet(packet, now, &mut out),
            Event::TimerFired { timer, now } => self.on_timer(timer, now, &mut out),
            Event::StreamData { .. } | Event::StreamEnd { .. } => {}
        }
        out
    }

    fn on_start(&mut self, now: Timestamp, out: &mut Vec<Action>) {
        if self.started_at.is_some() || self.get_path.is_none() {
            return;
        }
        self.started_at = Some(now);
        self.last_heard = now;
        self.send_request(now, out);
        out.push(Action::SetTimer {
            timer: TimerId::Idle,
            deadline: now + self.cfg.max_idle,
        });
    }

    fn send_request(&mut self, now: Timestamp, out: &mut Vec<Action>) {
        let Some(path) = self.get_path.clone() else {
            return;
        };
        out.push(Action::SendPacket {
            packet: Packet {
                header: PacketHeader::new(self.id, DescriptorWidth::W16),
                body: Body::Request(Request {
                    direction: Direction::Get,
                    path,
                }),
            },
            earliest: now,
        });
        out.push(Action::SetTimer {
            timer: TimerId::Request,
            deadline: now + self.cfg.status_interval,
        });
    }

    fn abort(&mut self, reason: AbortReason, out: &mut Vec<Action>) {
        self.state = ReceiverState::Failed;
        self.terminal = true;
        out.push(Action::Abort { reason });
    }

    fn on_packet(&mut self, packet: Packet, now: Timestamp, out: &mut Vec<Action>) {
        if packet.header.session_id != self.id {
            return;
        }
        if self.started_at.is_none() {
            self.started_at = Some(now);
            out.push(Action::SetTimer {
                timer: TimerId::Idle,
                deadline: now + self.cfg.max_idle,
            });
        }
        self.last_heard = now;
        let header = packet.header;
        match packet.body {
            Body::Metadata(m) => self.on_metadata(header, m, now, out),
            Body::Data(d) => self.on_data(header, d, now, out),
            Body::Request(_) | Body::Status(_) => {}
        }
    }

    fn on_metadata(
        &mut self,
        header: PacketHeader,
        m: Metadata,
        now: Timestamp,
        out: &mut Vec<Action>,
    ) {
        match self.state {
            ReceiverState::AwaitingMetadata => {}
            ReceiverState::Complete => {
                self.send_status(None, now, out);
                return;
            }
            _ => return,
        }
        self.width = header.width;
        self.expected_digest = m.digest;
        self.path = Some(m.path);
        if header.flags.streaming {
            self.mode = TransferMode::Stream;
            self.tracker = HoleTracker::unbounded();
        } else {
            self.mode = TransferMode::File;
            self.tracker = HoleTracker::with_size(m.transfer_size);
        }
        self.state = ReceiverState::Receiving;
        self.last_status_at = Some(now);
        out.push(Action::SetTimer {
            timer: TimerId::Status,
            deadline: now + self.cfg.status_interval,
        });
        self.check_complete(now, out);
    }

    fn on_data(&mut self, header: PacketHeader, d: Data, now: Timestamp, out: &mut Vec<Action>) {
        match self.state {
            // no size or width yet; the sender repeats Metadata
            ReceiverState::AwaitingMetadata | ReceiverState::Failed => return,
            ReceiverState::Complete => {
                if header.flags.status_requested {
                    self.send_status(d.solicit, now, out);
                }
                return;
            }
            ReceiverState::Receiving => {}
        }
        if header.width != self.width
            || header.flags.streaming != (self.mode == TransferMode::Stream)
        {
            self.abort(
                AbortReason::ProtocolViolation {
                    detail: "data does not match the announced transfer".into(),
                },
                out,
            );
            return;
        }
        let len = d.payload.len() as u128;
        let end = d.offset + len;
        if let Some(size) = self.tracker.expected_size() {
            if end > size {
                self.abort(
                    AbortReason::ProtocolViolation {
                        detail: format!("data {}+{} beyond transfer size {}", d.offset, len, size),
                    },
                    out,
                );
                return;
            }
        }
        if self.mode == TransferMode::Stream {
            self.poll_bound = self.poll_bound.max(end);
            if header.flags.end_of_data && self.stream_end.is_none() {
                self.stream_end = Some(end);
            }
        }

        if len > 0 {
            self.accept(d.offset, d.payload, out);
        }

        if header.flags.status_requested {
            self.send_status(d.solicit, now, out);
        } else if header.flags.end_of_data && !self.holes().is_empty() {
            self.send_status(None, now, out);
        }
        self.check_complete(now, out);
    }

    fn accept(&mut self, offset: u128, payload: Vec<u8>, out: &mut Vec<Action>) {
        let total = payload.len() as u128;
        // stream bytes below the delivery point were delivered or abandoned
        let floor = match self.mode {
            TransferMode::Stream => self.reorder.next,
            TransferMode::File => 0,
        };
        let start = offset.max(floor);
        let end = offset + total;
        if start >= end {
            self.duplicate_bytes += total;
            return;
        }
        let fresh = match self.tracker.mark_received(start, end - start) {
            Ok(f) => f,
            Err(_) => return,
        };
        let fresh_len: u128 = fresh.iter().map(|r| r.len()).sum();
        self.unique_bytes += fresh_len;
        self.duplicate_bytes += total - fresh_len;

        for r in fresh {
            let bytes = payload[(r.start - offset) as usize..(r.end - offset) as usize].to_vec();
            match self.mode {
                TransferMode::File => {
                    out.push(Action::WriteSink {
                        offset: r.start,
                        bytes: bytes.clone(),
                    });
                    for (_, b) in self.reorder.push(r.start, bytes) {
                        self.hasher.update(&b);
                    }
                }
                TransferMode::Stream => {
                    for (o, b) in self.reorder.push(r.start, bytes) {
                        out.push(Action::WriteSink {
                            offset: o,
                            bytes: b,
                        });
                    }
                }
            }
        }

        if self.mode == TransferMode::Stream {
            let window = self.cfg.stream_window as u128;
            let hw = self.tracker.high_water();
            if hw - self.reorder.next > window {
                let (released, gaps) = self.reorder.skip_to(hw - window);
                for g in gaps {
                    self.gap_bytes += g.len();
                    self.gaps.push(g);
                }
                for (o, b) in released {
                    out.push(Action::WriteSink {
                        offset: o,
                        bytes: b,
                    });
                }
            }
        }
    }

    /// Holes to report, bounded by the SNACK limit.
    fn holes(&self) -> Vec<ByteRange> {
        let max = self.cfg.wire.max_holes_per_status;
        match self.mode {
            TransferMode::File => self.tracker.hole_list(max),
            TransferMode::Stream => {
                let bound = self
                    .tracker
                    .high_water()
                    .max(self.poll_bound)
                    .max(self.stream_end.unwrap_or(0));
                self.tracker.received().gaps(self.reorder.next, bound, max)
            }
        }
    }

    fn send_status(&mut self, echo: Option<u32>, now: Timestamp, out: &mut Vec<Action>) {
        let complete = self.state == ReceiverState::Complete;
        let mut header = PacketHeader::new(self.id, self.width);
        header.flags.streaming = self.mode == TransferMode::Stream;
        header.flags.end_of_data = complete;
        let holes = if complete { Vec::new() } else { self.holes() };
        out.push(Action::SendPacket {
            packet: Packet {
                header,
                body: Body::Status(Status {
                    progress: self.progress(),
                    echo,
                    holes,
                }),
            },
            earliest: now,
        });
        self.status_sent += 1;
        self.last_status_at = Some(now);
    }

    fn check_complete(&mut self, now: Timestamp, out: &mut Vec<Action>) {
        if self.state != ReceiverState::Receiving {
            return;
        }
        let done = match self.mode {
            TransferMode::File => self.tracker.is_complete(),
            TransferMode::Stream => self.stream_end.is_some_and(|e| self.reorder.next >= e),
        };
        if !done {
            return;
        }
        self.completed_at = Some(now);
        if self.mode == TransferMode::File {
            let digest: [u8; DIGEST_LEN] = std::mem::take(&mut self.hasher).finalize().into();
            if digest != self.expected_digest {
                self.abort(AbortReason::DigestMismatch, out);
                return;
            }
        }
        self.digest_ok = true;
        self.state = ReceiverState::Complete;
        self.send_status(None, now, out);
        out.push(Action::SetTimer {
            timer: TimerId::Linger,
            deadline: now + self.cfg.linger,
        });
    }

    fn on_timer(&mut self, timer: TimerId, now: Timestamp, out: &mut Vec<Action>) {
        match (timer, self.state) {
            (TimerId::Request, ReceiverState::AwaitingMetadata) => self.send_request(now, out),
            (TimerId::Status, ReceiverState::Receiving) => {
                let next = self.last_status_at.map(|t| t + self.cfg.status_interval);
                if next.is_none_or(|t| now >= t) {
                    self.send_status(None, now, out);
                }
                out.push(Action::SetTimer {
                    timer: TimerId::Status,
                    deadline: self.last_status_at.unwrap_or(now) + self.cfg.status_interval,
                });
            }
            (TimerId::Idle, ReceiverState::AwaitingMetadata | ReceiverState::Receiving) => {
                let deadline = self.last_heard + self.cfg.max_idle;
                if now >= deadline {
                    self.abort(AbortReason::IdleTimeout, out);
                } else {
                    out.push(Action::SetTimer {
                        timer: TimerId::Idle,
                        deadline,
                    });
                }
            }
            (TimerId::Linger, ReceiverState::Complete) => {
                self.terminal = true;
                out.push(Action::Finished {
                    report: self.report(now),
                });
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reorder_releases_contiguous_runs() {
        let mut r = Reorder::default();
        assert!(r.push(3, vec![3, 4]).is_empty());
        let got = r.push(0, vec![0, 1, 2]);
        assert_eq!(got, vec![(0, vec![0, 1, 2]), (3, vec![3, 4])]);
        assert_eq!(r.next, 5);
    }

    #[test]
    fn reorder_skip_reports_gaps() {
        let mut r = Reorder::default();
        r.push(4, vec![4, 5]);
        r.push(10, vec![10]);
        let (out, gaps) = r.skip_to(8);
        assert_eq!(out, vec![(4, vec![4, 5])]);
        assert_eq!(gaps, vec![ByteRange::new(0, 4), ByteRange::new(6, 8)]);
        assert_eq!(r.next, 8);
        let (out, gaps) = r.skip_to(10);
        assert_eq!(out, vec![(10, vec![10])]);
        assert_eq!(gaps, vec![ByteRange::new(8, 10)]);
    }
}
