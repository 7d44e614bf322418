use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::holes::{ByteRange, RangeSet};
use crate::rate::Pacer;
use crate::time::Timestamp;
use crate::wire::{
    encoded_len, select_descriptor_width, Body, Data, DescriptorWidth, Direction, Metadata, Packet,
    PacketHeader, Request, Status, DIGEST_LEN,
};

use super::{
    AbortReason, Action, ByteSource, Event, SessionConfig, TimerId, TransferMode, TransferReport,
};

/// Descriptor width used for streams, whose size is not known up front.
pub const STREAM_WIDTH: DescriptorWidth = DescriptorWidth::W64;

/// Solicitations remembered for RTT sampling and hole validation.
const SOLICIT_HISTORY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SenderState {
    AwaitingRequest,
    Transferring,
    Draining,
    Done,
    Failed,
}

enum Source {
    File(Box<dyn ByteSource>),
    Stream(StreamBuffer),
}

/// Append-only stream bytes still eligible for (re)transmission.
#[derive(Default)]
struct StreamBuffer {
    base: u128,
    bytes: VecDeque<u8>,
    ended: bool,
}

impl StreamBuffer {
    fn end(&self) -> u128 {
        self.base + self.bytes.len() as u128
    }

    fn trim_below(&mut self, floor: u128) {
        if floor > self.base {
            let n = (floor - self.base).min(self.bytes.len() as u128) as usize;
            self.bytes.drain(..n);
            self.base += n as u128;
        }
    }

    fn read(&self, offset: u128, buf: &mut [u8]) -> bool {
        if offset < self.base || offset + buf.len() as u128 > self.end() {
            return false;
        }
        let start = (offset - self.base) as usize;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = self.bytes[start + i];
        }
        true
    }
}

struct Solicitation {
    seq: u32,
    sent_at: Timestamp,
    // bytes below this offset had all been sent once when it left
    cursor: u128,
}

/// Sending side of one transfer.
pub struct SenderSession {
    id: u32,
    mode: TransferMode,
    width: DescriptorWidth,
    cfg: SessionConfig,
    source: Source,
    digest: [u8; DIGEST_LEN],
    path: String,
    initiates: bool,
    state: SenderState,
    pacer: Pacer,

    cursor: u128,
    retransmit: RangeSet,
    // retransmitted spans with the solicitation count at send time
    resent: VecDeque<(ByteRange, u32)>,
    solicits: VecDeque<Solicitation>,
    solicit_count: u32,
    last_solicit_at: Option<Timestamp>,
    eod_polled: bool,
    metadata_acked: bool,
    transmit_armed: Option<Timestamp>,
    peer_progress: u128,
    packets_since_feedback: u64,

    started_at: Option<Timestamp>,
    last_heard: Timestamp,
    unique_sent: u128,
    resent_bytes: u128,
    status_received: u64,
    terminal: bool,
}

impl SenderSession {
    /// File sender. `initiates` selects put (we open the transfer) versus
    /// get (we wait for the receiver's Request).
    pub fn file(
        id: u32,
        source: Box<dyn ByteSource>,
        digest: [u8; DIGEST_LEN],
        path: impl Into<String>,
        initiates: bool,
        cfg: SessionConfig,
    ) -> Self {
        let width = select_descriptor_width(source.len());
        Self::build(
            id,
            TransferMode::File,
            width,
            Source::File(source),
            digest,
            path.into(),
            initiates,
            cfg,
        )
    }

    /// Stream sender; data arrives through [`Event::StreamData`].
    pub fn stream(id: u32, path: impl Into<String>, cfg: SessionConfig) -> Self {
        Self::build(
            id,
            TransferMode::Stream,
            STREAM_WIDTH,
            Source::Stream(StreamBuffer::default()),
            [0; DIGEST_LEN],
            path.into(),
            true,
            cfg,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        id: u32,
        mode: TransferMode,
        width: DescriptorWidth,
        source: Source,
        digest: [u8; DIGEST_LEN],
        path: String,
        initiates: bool,
        cfg: SessionConfig,
    ) -> Self {
        Self {
            id,
            mode,
            width,
            pacer: Pacer::from_config(cfg.pacer, cfg.wire.max_payload),
            cfg,
            source,
            digest,
            path,
            initiates,
            state: if initiates {
                SenderState::Transferring
            } else {
                SenderState::AwaitingRequest
            },
            cursor: 0,
            retransmit: RangeSet::new(),
            resent: VecDeque::new(),
            solicits: VecDeque::new(),
            solicit_count: 0,
            last_solicit_at: None,
            eod_polled: false,
            metadata_acked: false,
            transmit_armed: None,
            peer_progress: 0,
            packets_since_feedback: 0,
            started_at: None,
            last_heard: Timestamp::ZERO,
            unique_sent: 0,
            resent_bytes: 0,
            status_received: 0,
            terminal: false,
        }
    }

    pub fn session_id(&self) -> u32 {
        self.id
    }

    pub fn state(&self) -> SenderState {
        self.state
    }

    pub fn mode(&self) -> TransferMode {
        self.mode
    }

    pub fn width(&self) -> DescriptorWidth {
        self.width
    }

    pub fn cursor(&self) -> u128 {
        self.cursor
    }

    pub fn pacer(&self) -> &Pacer {
        &self.pacer
    }

    /// Pending retransmissions.
    pub fn retransmit_queue(&self) -> &RangeSet {
        &self.retransmit
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Stream bytes accepted but not yet sent once. Feeding more than
    /// `stream_window` beyond this aborts with `SourceOverrun`.
    pub fn stream_backlog(&self) -> u128 {
        match &self.source {
            Source::Stream(b) => b.end() - self.cursor,
            Source::File(_) => 0,
        }
    }

    /// Known end of the data: file size, or stream end once closed.
    fn end(&self) -> Option<u128> {
        match &self.source {
            Source::File(s) => Some(s.len()),
            Source::Stream(b) => b.ended.then(|| b.end()),
        }
    }

    /// Bytes currently available to send for the first time.
    fn available(&self) -> u128 {
        match &self.source {
            Source::File(s) => s.len(),
            Source::Stream(b) => b.end(),
        }
    }

    fn all_sent(&self) -> bool {
        self.end().is_some_and(|e| self.cursor >= e)
    }

    fn has_data_to_send(&self) -> bool {
        !self.retransmit.is_empty() || self.cursor < self.available()
    }

    pub fn report(&self, now: Timestamp) -> TransferReport {
        let duration = self.started_at.map(|s| now - s).unwrap_or_default();
        TransferReport::new(
            self.unique_sent,
            self.resent_bytes,
            duration,
            self.status_received,
            self.state == SenderState::Done,
        )
    }

    fn header(&self) -> PacketHeader {
        let mut h = PacketHeader::new(self.id, self.width);
        h.flags.streaming = self.mode == TransferMode::Stream;
        h
    }

    /// Queues `packet` behind the pacer and returns its release time.
    fn paced(&mut self, packet: Packet, now: Timestamp, out: &mut Vec<Action>) -> Timestamp {
        let earliest = self.pacer.earliest_send(encoded_len(&packet), now);
        out.push(Action::SendPacket { packet, earliest });
        earliest
    }

    fn metadata_packet(&self) -> Packet {
        Packet {
            header: self.header(),
            body: Body::Metadata(Metadata {
                transfer_size: match self.mode {
                    TransferMode::File => self.available(),
                    TransferMode::Stream => u128::MAX,
                },
                digest: self.digest,
                path: self.path.clone(),
            }),
        }
    }

    /// Handles one event. Terminal sessions ignore everything.
    pub fn on_event(&mut self, event: Event) -> Vec<Action> {
        let mut out = Vec::new();
        if self.terminal {
            return out;
        }
        let now = event.now();
        match event {
            Event::Start { now } => self.on_start(now, &mut out),
            Event::PacketArrived { packet, now } => self.on_packet(packet, now, &mut out),
            Event::TimerFired { timer, now } => self.on_timer(timer, now, &mut out),
            Event::StreamData { bytes, now } => self.on_stream_data(bytes, now, &mut out),
            Event::StreamEnd { now } => self.on_stream_end(now, &mut out),
        }
        if matches!(
            self.state,
            SenderState::Transferring | SenderState::Draining
        ) && !self.terminal
            && self.transmit_armed.is_none()
            && self.has_data_to_send()
        {
            self.arm_transmit(now, &mut out);
        }
        out
    }

    fn on_start(&mut self, now: Timestamp, out: &mut Vec<Action>) {
        if self.started_at.is_some() {
            return;
        }
        self.last_heard = now;
        if !self.initiates {
            return;
        }
        self.started_at = Some(now);
        self.paced(
            Packet {
                header: self.header(),
                body: Body::Request(Request {
                    direction: Direction::Put,
                    path: self.path.clone(),
                }),
            },
            now,
            out,
        );
        self.begin_transfer(now, out);
    }

    fn begin_transfer(&mut self, now: Timestamp, out: &mut Vec<Action>) {
        self.state = SenderState::Transferring;
        self.last_heard = now;
        self.paced(self.metadata_packet(), now, out);
        out.push(Action::SetTimer {
            timer: TimerId::Idle,
            deadline: now + self.cfg.max_idle,
        });
        out.push(Action::SetTimer {
            timer: TimerId::Solicit,
            deadline: now + self.cfg.status_interval,
        });
        if self.has_data_to_send() {
            self.arm_transmit(now, out);
        } else if self.all_sent() {
            self.send_poll(now, out);
        }
    }

    fn arm_transmit(&mut self, at: Timestamp, out: &mut Vec<Action>) {
        self.transmit_armed = Some(at);
        out.push(Action::SetTimer {
            timer: TimerId::Transmit,
            deadline: at,
        });
    }

    fn abort(&mut self, reason: AbortReason, out: &mut Vec<Action>) {
        self.state = SenderState::Failed;
        self.terminal = true;
        out.push(Action::Abort { reason });
    }

    fn on_packet(&mut self, packet: Packet, now: Timestamp, out: &mut Vec<Action>) {
        match packet.body {
            Body::Request(req) => {
                if packet.header.session_id != self.id {
                    return;
                }
                match (self.state, req.direction) {
                    (SenderState::AwaitingRequest, Direction::Get) => {
                        self.started_at = Some(now);
                        self.begin_transfer(now, out);
                    }
                    (_, Direction::Get) if !self.metadata_acked => {
                        self.paced(self.metadata_packet(), now, out);
                    }
                    _ => {}
                }
            }
            Body::Status(st) => {
                if packet.header.session_id != self.id {
                    self.abort(
                        AbortReason::ProtocolViolation {
                            detail: format!(
                                "status for unknown session {}",
                                packet.header.session_id
                            ),
                        },
                        out,
                    );
                    return;
                }
                if self.state == SenderState::AwaitingRequest {
                    return;
                }
                self.on_status(st, packet.header.flags.end_of_data, now, out);
            }
            // Metadata and Data flow the other way.
            Body::Metadata(_) | Body::Data(_) => {}
        }
    }

    fn on_status(&mut self, st: Status, complete: bool, now: Timestamp, out: &mut Vec<Action>) {
        self.last_heard = now;
        self.metadata_acked = true;
        self.status_received += 1;
        self.peer_progress = self.peer_progress.max(st.progress);
        self.retransmit.trim_below(self.peer_progress);
        let floor = self.peer_progress;
        self.resent.retain(|(r, _)| r.end > floor);
        if let Source::Stream(buf) = &mut self.source {
            // the receiver never asks for anything below its progress
            buf.trim_below(floor.min(self.cursor));
        }

        if complete && self.end().is_some_and(|e| st.progress >= e) && st.holes.is_empty() {
            self.state = SenderState::Done;
            self.terminal = true;
            out.push(Action::Finished {
                report: self.report(now),
            });
            return;
        }

        let Some(seq) = st.echo else { return };
        let Some(pos) = self.solicits.iter().position(|s| s.seq == seq) else {
            return;
        };
        let (sent_at, cursor_then) = (self.solicits[pos].sent_at, self.solicits[pos].cursor);
        self.solicits.drain(..pos);
        let rtt = (now - sent_at).as_secs_f64();

        let stream_floor = match &self.source {
            Source::Stream(b) => b.base,
            Source::File(_) => 0,
        };
        let mut new_losses = 0u64;
        let lo = stream_floor.max(floor);
        if lo >= cursor_then {
            self.solicits.pop_front();
            self.finish_feedback(rtt, 0, now);
            return;
        }
        let sent_once = ByteRange {
            start: lo,
            end: cursor_then,
        };
        for hole in st.holes {
            let Some(clipped) = hole.intersect(&sent_once) else {
                continue;
            };
            let mut valid = RangeSet::new();
            valid.insert(clipped);
            // resent at or after this solicitation: may still be in flight
            for (r, epoch) in &self.resent {
                if *epoch >= seq {
                    valid.remove(*r);
                }
            }
            for r in valid.iter().collect::<Vec<_>>() {
                if !self.retransmit.insert(r).is_empty() {
                    new_losses += 1;
                }
            }
        }
        self.resent.retain(|(_, epoch)| *epoch >= seq);
        self.finish_feedback(rtt, new_losses, now);
    }

    fn finish_feedback(&mut self, rtt: f64, new_losses: u64, now: Timestamp) {
        self.pacer
            .on_feedback(Some(rtt), new_losses, self.packets_since_feedback, now);
        self.packets_since_feedback = 0;
        if !self.retransmit.is_empty() && self.state == SenderState::Draining {
            self.state = SenderState::Transferring;
        }
    }

    fn on_timer(&mut self, timer: TimerId, now: Timestamp, out: &mut Vec<Action>) {
        if self.state == SenderState::AwaitingRequest {
            return;
        }
        match timer {
            TimerId::Transmit => {
                if self.transmit_armed.is_some_and(|t| t <= now) {
                    self.transmit_armed = None;
                    self.transmit(now, out);
                }
            }
            TimerId::Solicit => {
                let due = self
                    .last_solicit_at
                    .is_none_or(|t| now >= t + self.cfg.status_interval);
                if due && self.transmit_armed.is_none() {
                    self.send_poll(now, out);
                }
                let next = self.last_solicit_at.unwrap_or(now).max(now) + self.cfg.status_interval;
                out.push(Action::SetTimer {
                    timer: TimerId::Solicit,
                    deadline: next,
                });
            }
            TimerId::Idle => {
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
            TimerId::Status | TimerId::Request | TimerId::Linger => {}
        }
    }

    fn on_stream_data(&mut self, bytes: Vec<u8>, _now: Timestamp, out: &mut Vec<Action>) {
        let Source::Stream(buf) = &mut self.source else {
            return;
        };
        if buf.ended {
            return;
        }
        buf.bytes.extend(bytes);
        let backlog = buf.end() - self.cursor;
        if backlog > self.cfg.stream_window as u128 {
            self.abort(AbortReason::SourceOverrun, out);
            return;
        }
        if self.state == SenderState::Draining {
            self.state = SenderState::Transferring;
        }
    }

    fn on_stream_end(&mut self, now: Timestamp, out: &mut Vec<Action>) {
        let Source::Stream(buf) = &mut self.source else {
            return;
        };
        if buf.ended {
            return;
        }
        buf.ended = true;
        if self.started_at.is_some() && self.transmit_armed.is_none() && !self.has_data_to_send() {
            self.send_poll(now, out);
        }
    }

    /// Next span to send: oldest retransmission first, then new bytes.
    fn next_chunk(&mut self) -> Option<(ByteRange, bool)> {
        let max = self.cfg.wire.max_payload as u128;
        if let Some(r) = self.retransmit.first() {
            let chunk = ByteRange {
                start: r.start,
                end: r.start + r.len().min(max),
            };
            self.retransmit.remove(chunk);
            return Some((chunk, true));
        }
        let avail = self.available();
        if self.cursor < avail {
            let chunk = ByteRange {
                start: self.cursor,
                end: self.cursor + (avail - self.cursor).min(max),
            };
            return Some((chunk, false));
        }
        None
    }

    fn read(&mut self, r: ByteRange) -> Result<Vec<u8>, String> {
        let mut buf = vec![0u8; r.len() as usize];
        match &mut self.source {
            Source::File(s) => s.read_at(r.start, &mut buf).map_err(|e| e.to_string())?,
            Source::Stream(b) => {
                if !b.read(r.start, &mut buf) {
                    return Err(format!("stream bytes {r} no longer buffered"));
                }
            }
        }
        Ok(buf)
    }

    fn transmit(&mut self, now: Timestamp, out: &mut Vec<Action>) {
        let Some((chunk, is_retx)) = self.next_chunk() else {
            if self.all_sent() {
                self.state = SenderState::Draining;
                if !self.eod_polled {
                    self.send_poll(now, out);
                }
            }
            return;
        };
        let payload = match self.read(chunk) {
            Ok(p) => p,
            Err(detail) => {
                self.abort(AbortReason::SourceError { detail }, out);
                return;
            }
        };
        out.push(Action::ReadSource {
            offset: chunk.start,
            len: chunk.len() as u64,
        });

        let last_new = !is_retx && self.end() == Some(chunk.end);
        if is_retx {
            self.resent_bytes += chunk.len();
        } else {
            self.cursor = chunk.end;
            self.unique_sent += chunk.len();
        }
        let drained = self.retransmit.is_empty() && self.all_sent();
        let solicit = last_new
            || (is_retx && drained)
            || self
                .last_solicit_at
                .is_none_or(|t| now >= t + self.cfg.status_interval);

        let mut header = self.header();
        header.flags.end_of_data = last_new;
        let solicit_seq = solicit.then(|| self.next_solicitation(now));
        header.flags.status_requested = solicit_seq.is_some();
        if is_retx {
            self.resent.push_back((chunk, self.solicit_count));
        }
        if drained && solicit {
            self.eod_polled = true;
        }
        if solicit && !self.metadata_acked {
            self.paced(self.metadata_packet(), now, out);
        }
        let packet = Packet {
            header,
            body: Body::Data(Data {
                offset: chunk.start,
                solicit: solicit_seq,
                payload,
            }),
        };
        let earliest = self.paced(packet, now, out);
        self.packets_since_feedback += 1;

        if self.has_data_to_send() {
            self.arm_transmit(earliest, out);
        } else if self.all_sent() {
            self.state = SenderState::Draining;
        }
    }

    fn next_solicitation(&mut self, now: Timestamp) -> u32 {
        self.solicit_count = self.solicit_count.wrapping_add(1);
        self.last_solicit_at = Some(now);
        self.solicits.push_back(Solicitation {
            seq: self.solicit_count,
            sent_at: now,
            cursor: self.cursor,
        });
        if self.solicits.len() > SOLICIT_HISTORY {
            self.solicits.pop_front();
        }
        self.solicit_count
    }

    /// Zero-length Data carrying only a solicitation; tells the receiver how
    /// far the sender has got and, once everything is out, where the end is.
    fn send_poll(&mut self, now: Timestamp, out: &mut Vec<Action>) {
        if !self.metadata_acked {
            self.paced(self.metadata_packet(), now, out);
        }
        let all_sent = self.all_sent();
        let seq = self.next_solicitation(now);
        if all_sent && self.retransmit.is_empty() {
            self.eod_polled = true;
        }
        let mut header = self.header();
        header.flags.end_of_data = all_sent;
        header.flags.status_requested = true;
        self.paced(
            Packet {
                header,
                body: Body::Data(Data {
                    offset: self.cursor,
                    solicit: Some(seq),
                    payload: Vec::new(),
                }),
            },
            now,
            out,
        );
    }
}
