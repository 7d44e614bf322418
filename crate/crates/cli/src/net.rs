//! Drives one session over a real UDP socket.
//!
//! A reader thread decodes datagrams into a channel; the driver thread owns
//! the session, its timers and the outgoing queue. Session timestamps are
//! nanoseconds since the driver started.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{self, Read};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use saratoga::session::{
    AbortReason, Action, Event, ReceiverSession, SenderSession, TimerId, TransferReport,
};
use saratoga::time::Timestamp;
use saratoga::wire::{decode_packet, encode_packet, Packet, WireConfig};

const READ_POLL: Duration = Duration::from_millis(50);
const IDLE_WAIT: Duration = Duration::from_millis(100);
// inputs handled per loop turn before timers get another look
const INPUT_BATCH: usize = 256;
const STREAM_CHUNK: usize = 64 * 1024;
const STREAM_TOKENS: usize = 4;

pub enum Endpoint {
    Sender(SenderSession),
    Receiver(ReceiverSession),
}

impl Endpoint {
    fn on_event(&mut self, e: Event) -> Vec<Action> {
        match self {
            Endpoint::Sender(s) => s.on_event(e),
            Endpoint::Receiver(r) => r.on_event(e),
        }
    }

    pub fn report(&self, now: Timestamp) -> TransferReport {
        match self {
            Endpoint::Sender(s) => s.report(now),
            Endpoint::Receiver(r) => r.report(now),
        }
    }

    pub fn session_id(&self) -> u32 {
        match self {
            Endpoint::Sender(s) => s.session_id(),
            Endpoint::Receiver(r) => r.session_id(),
        }
    }

    pub fn receiver(&self) -> Option<&ReceiverSession> {
        match self {
            Endpoint::Receiver(r) => Some(r),
            Endpoint::Sender(_) => None,
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Aborted(AbortReason),
    Sink(io::Error),
    StreamInput(io::Error),
    NoPeer(Duration),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Aborted(r) => write!(f, "{r}"),
            Failure::Sink(e) => write!(f, "writing output failed: {e}"),
            Failure::StreamInput(e) => write!(f, "reading stream input failed: {e}"),
            Failure::NoPeer(d) => write!(f, "no peer showed up within {} ms", d.as_millis()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct NetStats {
    pub datagrams_sent: u64,
    pub bytes_sent: u64,
    pub send_errors: u64,
    pub datagrams_received: u64,
    pub undecodable: u64,
    /// Datagrams from addresses other than the peer.
    pub foreign: u64,
}

pub struct Outcome {
    pub endpoint: Option<Endpoint>,
    pub result: Result<TransferReport, Failure>,
    pub stats: NetStats,
    pub peer: Option<SocketAddr>,
    /// `(ns since start, datagram bytes)` per send, when logging was asked for.
    pub packet_log: Vec<(u64, usize)>,
    pub elapsed: Duration,
}

enum Input {
    Packet(Packet, SocketAddr),
    Undecodable,
    Stream(io::Result<Option<Vec<u8>>>),
}

type Accept<'a> = Box<dyn FnMut(&Packet) -> Option<Endpoint> + 'a>;
type WriteSink<'a> = Box<dyn FnMut(&Endpoint, u128, &[u8]) -> io::Result<()> + 'a>;

pub struct Driver<'a> {
    socket: UdpSocket,
    wire: WireConfig,
    peer: Option<SocketAddr>,
    endpoint: Option<Endpoint>,
    accept: Option<Accept<'a>>,
    on_write: Option<WriteSink<'a>>,
    stream: Option<Box<dyn Read + Send>>,
    stream_window: u64,
    first_packet_wait: Option<Duration>,
    log_packets: bool,
}

impl<'a> Driver<'a> {
    /// Driver for a session that already knows its peer.
    pub fn connected(
        socket: UdpSocket,
        wire: WireConfig,
        peer: SocketAddr,
        endpoint: Endpoint,
    ) -> Self {
        Self::build(socket, wire, Some(peer), Some(endpoint), None)
    }

    /// Driver that builds its session from the first datagram `accept`
    /// takes; the datagram's source becomes the peer.
    pub fn listening(
        socket: UdpSocket,
        wire: WireConfig,
        accept: impl FnMut(&Packet) -> Option<Endpoint> + 'a,
    ) -> Self {
        Self::build(socket, wire, None, None, Some(Box::new(accept)))
    }

    fn build(
        socket: UdpSocket,
        wire: WireConfig,
        peer: Option<SocketAddr>,
        endpoint: Option<Endpoint>,
        accept: Option<Accept<'a>>,
    ) -> Self {
        Self {
            socket,
            wire,
            peer,
            endpoint,
            accept,
            on_write: None,
            stream: None,
            stream_window: 1 << 20,
            first_packet_wait: None,
            log_packets: false,
        }
    }

    pub fn on_write(
        mut self,
        f: impl FnMut(&Endpoint, u128, &[u8]) -> io::Result<()> + 'a,
    ) -> Self {
        self.on_write = Some(Box::new(f));
        self
    }

    /// Feeds a stream sender from `input`, never letting its unsent
    /// backlog exceed `window`.
    pub fn stream_input(mut self, input: Box<dyn Read + Send>, window: u64) -> Self {
        self.stream = Some(input);
        self.stream_window = window;
        self
    }

    pub fn first_packet_wait(mut self, wait: Option<Duration>) -> Self {
        self.first_packet_wait = wait;
        self
    }

    pub fn log_packets(mut self, on: bool) -> Self {
        self.log_packets = on;
        self
    }

    pub fn run(self) -> io::Result<Outcome> {
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let reader = spawn_reader(
            self.socket.try_clone()?,
            self.wire,
            tx.clone(),
            stop.clone(),
        )?;
        let (tokens, stream_thread) = match self.stream {
            Some(input) => {
                let chunk = STREAM_CHUNK.min((self.stream_window as usize / 4).max(1));
                let (tok_tx, tok_rx) = mpsc::sync_channel(STREAM_TOKENS);
                for _ in 0..STREAM_TOKENS {
                    tok_tx.send(()).expect("token channel has room");
                }
                let t = spawn_stream_reader(input, chunk, tok_rx, tx.clone())?;
                (Some(tok_tx), Some(t))
            }
            None => (None, None),
        };
        drop(tx);

        let mut lp = Loop {
            socket: self.socket,
            wire: self.wire,
            peer: self.peer,
            endpoint: self.endpoint,
            accept: self.accept,
            on_write: self.on_write,
            start: Instant::now(),
            outbox: VecDeque::new(),
            timers: HashMap::new(),
            pending_stream: VecDeque::new(),
            stream_ended: false,
            tokens,
            stream_window: self.stream_window,
            end: None,
            stats: NetStats::default(),
            log: self.log_packets.then(Vec::new),
        };
        lp.run(&rx, self.first_packet_wait);

        stop.store(true, Ordering::Relaxed);
        drop(rx);
        let _ = reader.join();
        // a stream reader blocked on stdin is left behind; process exit reaps it
        drop(stream_thread);

        let now = lp.now();
        let result = lp
            .end
            .take()
            .expect("the loop only exits once the run has ended");
        Ok(Outcome {
            result,
            stats: lp.stats,
            peer: lp.peer,
            packet_log: lp.log.unwrap_or_default(),
            elapsed: Duration::from_nanos(now.0),
            endpoint: lp.endpoint,
        })
    }
}

fn spawn_reader(
    socket: UdpSocket,
    wire: WireConfig,
    tx: Sender<Input>,
    stop: Arc<AtomicBool>,
) -> io::Result<JoinHandle<()>> {
    socket.set_read_timeout(Some(READ_POLL))?;
    thread::Builder::new()
        .name("udp-reader".into())
        .spawn(move || {
            let mut buf = vec![0u8; 65_536];
            while !stop.load(Ordering::Relaxed) {
                let msg = match socket.recv_from(&mut buf) {
                    Ok((n, from)) => match decode_packet(&buf[..n], &wire) {
                        Ok(p) => Input::Packet(p, from),
                        Err(_) => Input::Undecodable,
                    },
                    // timeouts, and ICMP errors surfacing on the socket
                    Err(_) => continue,
                };
                if tx.send(msg).is_err() {
                    break;
                }
            }
        })
}

fn spawn_stream_reader(
    mut input: Box<dyn Read + Send>,
    chunk: usize,
    tokens: Receiver<()>,
    tx: Sender<Input>,
) -> io::Result<JoinHandle<()>> {
    thread::Builder::new()
        .name("stream-input".into())
        .spawn(move || {
            let mut buf = vec![0u8; chunk];
            while tokens.recv().is_ok() {
                let msg = match read_full(&mut input, &mut buf) {
                    Ok(0) => Ok(None),
                    Ok(n) => Ok(Some(buf[..n].to_vec())),
                    Err(e) => Err(e),
                };
                let last = !matches!(msg, Ok(Some(_)));
                if tx.send(Input::Stream(msg)).is_err() || last {
                    break;
                }
            }
        })
}

/// Reads until `buf` is full or the input ends.
fn read_full(input: &mut dyn Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match input.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

struct Loop<'a> {
    socket: UdpSocket,
    wire: WireConfig,
    peer: Option<SocketAddr>,
    endpoint: Option<Endpoint>,
    accept: Option<Accept<'a>>,
    on_write: Option<WriteSink<'a>>,
    start: Instant,
    outbox: VecDeque<(Packet, Timestamp)>,
    timers: HashMap<TimerId, Timestamp>,
    pending_stream: VecDeque<Vec<u8>>,
    stream_ended: bool,
    tokens: Option<SyncSender<()>>,
    stream_window: u64,
    end: Option<Result<TransferReport, Failure>>,
    stats: NetStats,
    log: Option<Vec<(u64, usize)>>,
}

impl Loop<'_> {
    fn now(&self) -> Timestamp {
        Timestamp(self.start.elapsed().as_nanos() as u64)
    }

    fn run(&mut self, rx: &Receiver<Input>, first_packet_wait: Option<Duration>) {
        if self.endpoint.is_some() {
            let now = self.now();
            self.dispatch(Event::Start { now });
        }
        while self.end.is_none() {
            let now = self.now();
            self.flush(now);
            self.fire_timers(now);
            self.feed_stream();
            self.flush(self.now());
            if self.end.is_some() {
                break;
            }
            if self.endpoint.is_none() {
                if let Some(w) = first_packet_wait {
                    if self.start.elapsed() >= w {
                        self.end = Some(Err(Failure::NoPeer(w)));
                        break;
                    }
                }
            }

            let wait = match self.next_wake() {
                Some(at) => Duration::from_nanos(at.0.saturating_sub(self.now().0)),
                None => IDLE_WAIT,
            };
            let first = if wait.is_zero() {
                rx.try_recv().ok()
            } else {
                match rx.recv_timeout(wait.min(IDLE_WAIT)) {
                    Ok(m) => Some(m),
                    Err(RecvTimeoutError::Timeout) => None,
                    // reader gone: nothing more can arrive
                    Err(RecvTimeoutError::Disconnected) => {
                        thread::sleep(wait.min(IDLE_WAIT));
                        None
                    }
                }
            };
            if let Some(m) = first {
                self.input(m);
                for m in rx.try_iter().take(INPUT_BATCH) {
                    if self.end.is_some() {
                        break;
                    }
                    self.input(m);
                }
            }
        }
    }

    fn next_wake(&self) -> Option<Timestamp> {
        let out = self.outbox.front().map(|(_, at)| *at);
        let timers = self
            .timers
            .iter()
            .filter(|(t, _)| **t != TimerId::Transmit || self.outbox.is_empty())
            .map(|(_, at)| *at)
            .min();
        out.into_iter().chain(timers).min()
    }

    fn input(&mut self, m: Input) {
        match m {
            Input::Packet(p, from) => {
                self.stats.datagrams_received += 1;
                if self.endpoint.is_none() {
                    let Some(ep) = self.accept.as_mut().and_then(|f| f(&p)) else {
                        return;
                    };
                    self.endpoint = Some(ep);
                    self.peer = Some(from);
                    let now = self.now();
                    self.dispatch(Event::Start { now });
                }
                if self.peer != Some(from) {
                    self.stats.foreign += 1;
                    return;
                }
                let now = self.now();
                self.dispatch(Event::PacketArrived { packet: p, now });
            }
            Input::Undecodable => {
                self.stats.datagrams_received += 1;
                self.stats.undecodable += 1;
            }
            Input::Stream(Ok(Some(bytes))) => self.pending_stream.push_back(bytes),
            Input::Stream(Ok(None)) => self.stream_ended = true,
            Input::Stream(Err(e)) => {
                if self.end.is_none() {
                    self.end = Some(Err(Failure::StreamInput(e)));
                }
            }
        }
    }

    /// Hands buffered stream input to the sender while its backlog allows.
    fn feed_stream(&mut self) {
        let Some(Endpoint::Sender(s)) = &self.endpoint else {
            return;
        };
        let mut backlog = s.stream_backlog();
        while let Some(chunk) = self.pending_stream.front() {
            if backlog + chunk.len() as u128 > self.stream_window as u128 {
                break;
            }
            let bytes = self.pending_stream.pop_front().unwrap();
            backlog += bytes.len() as u128;
            let now = self.now();
            self.dispatch(Event::StreamData { bytes, now });
            if let Some(t) = &self.tokens {
                let _ = t.try_send(());
            }
        }
        if self.stream_ended && self.pending_stream.is_empty() {
            self.stream_ended = false;
            self.tokens = None;
            let now = self.now();
            self.dispatch(Event::StreamEnd { now });
        }
    }

    fn fire_timers(&mut self, now: Timestamp) {
        let mut due: Vec<(Timestamp, TimerId)> = self
            .timers
            .iter()
            .filter(|(_, at)| **at <= now)
            .map(|(t, at)| (*at, *t))
            .collect();
        due.sort();
        for (_, timer) in due {
            // the interface is busy until queued packets are out
            if timer == TimerId::Transmit && !self.outbox.is_empty() {
                continue;
            }
            self.timers.remove(&timer);
            self.dispatch(Event::TimerFired { timer, now });
            if timer == TimerId::Transmit {
                self.flush(now);
            }
            if self.end.is_some() {
                return;
            }
        }
    }

    fn flush(&mut self, now: Timestamp) {
        let Some(peer) = self.peer else {
            return;
        };
        while self.outbox.front().is_some_and(|(_, at)| *at <= now) {
            let (packet, _) = self.outbox.pop_front().unwrap();
            let bytes = match encode_packet(&packet, &self.wire) {
                Ok(b) => b,
                Err(e) => panic!("session produced an unencodable packet: {e}"),
            };
            match self.socket.send_to(&bytes, peer) {
                Ok(n) => {
                    self.stats.datagrams_sent += 1;
                    self.stats.bytes_sent += n as u64;
                    if let Some(log) = &mut self.log {
                        log.push((self.start.elapsed().as_nanos() as u64, n));
                    }
                }
                // counted as loss; repair takes care of it
                Err(_) => self.stats.send_errors += 1,
            }
        }
    }

    fn dispatch(&mut self, event: Event) {
        let Some(ep) = &mut self.endpoint else {
            return;
        };
        let now = event.now();
        let actions = ep.on_event(event);
        for a in actions {
            match a {
                Action::SendPacket { packet, earliest } => {
                    self.outbox.push_back((packet, earliest.max(now)))
                }
                Action::SetTimer { timer, deadline } => {
                    self.timers.insert(timer, deadline);
                }
                Action::WriteSink { offset, bytes } => {
                    if let (Some(f), Some(ep)) = (&mut self.on_write, &self.endpoint) {
                        if let Err(e) = f(ep, offset, &bytes) {
                            self.end.get_or_insert(Err(Failure::Sink(e)));
                        }
                    }
                }
                Action::ReadSource { .. } => {}
                Action::Finished { report } => {
                    self.end.get_or_insert(Ok(report));
                }
                Action::Abort { reason } => {
                    self.end.get_or_insert(Err(Failure::Aborted(reason)));
                }
            }
        }
    }
}
