#![no_main]

//! Input: datagrams as `u16 big-endian length, bytes`, fed alternately to
//! a put receiver and a file sender 10 ms apart.

use libfuzzer_sys::fuzz_target;
use saratoga::session::{Event, MemSource, ReceiverSession, SenderSession, SessionConfig, TimerId};
use saratoga::wire::decode_packet;
use saratoga::Timestamp;

fuzz_target!(|data: &[u8]| {
    let cfg = SessionConfig::default();
    let mut rx = ReceiverSession::put(1, cfg);
    let src = MemSource((0..3000u32).map(|i| i as u8).collect());
    let mut tx = SenderSession::file(1, Box::new(src), [0; 32], "f", true, cfg);
    tx.on_event(Event::Start {
        now: Timestamp::ZERO,
    });
    rx.on_event(Event::Start {
        now: Timestamp::ZERO,
    });

    let mut rest = data;
    let mut t = 0u64;
    while rest.len() >= 2 {
        let n = u16::from_be_bytes([rest[0], rest[1]]) as usize;
        let body = &rest[2..];
        let (dgram, tail) = body.split_at(n.min(body.len()));
        rest = tail;
        t += 10_000_000;
        let now = Timestamp(t);
        if let Ok(packet) = decode_packet(dgram, &cfg.wire) {
            let ev = Event::PacketArrived { packet, now };
            if t.is_multiple_of(20_000_000) {
                tx.on_event(ev);
            } else {
                rx.on_event(ev);
            }
        }
        tx.on_event(Event::TimerFired {
            timer: TimerId::Transmit,
            now,
        });
        rx.on_event(Event::TimerFired {
            timer: TimerId::Status,
            now,
        });
    }
});
