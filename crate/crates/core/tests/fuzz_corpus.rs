//! Replays the checked-in fuzz seeds through the same checks the fuzz
//! targets make, so the corpus stays meaningful on stable toolchains.

use std::fs;
use std::path::PathBuf;

use saratoga::rate::PacerConfig;
use saratoga::session::{Event, MemSource, ReceiverSession, SenderSession, SessionConfig, TimerId};
use saratoga::trace::parse_line;
use saratoga::wire::{decode_header, decode_packet, encode_packet, WireConfig};
use saratoga::Timestamp;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files.iter().map(|p| fs::read(p).unwrap()).collect()
}

#[test]
fn packet_seeds_decode_and_roundtrip() {
    let cfg = WireConfig::default();
    for s in seeds("decode_packet") {
        let p = decode_packet(&s, &cfg).expect("seed packets are valid");
        p.validate(&cfg).unwrap();
        assert_eq!(encode_packet(&p, &cfg).unwrap(), s);
        let (ptype, h) = decode_header(&s).unwrap();
        assert_eq!(ptype, p.packet_type());
        assert_eq!(h, p.header);
    }
    assert_eq!(seeds("decode_header").len(), seeds("decode_packet").len());
}

#[test]
fn trace_seeds_parse_and_reserialise() {
    for s in seeds("trace_line") {
        let line = String::from_utf8(s).unwrap();
        let r = parse_line(&line).unwrap_or_else(|e| panic!("{line}: {e}"));
        assert_eq!(serde_json::to_string(&r).unwrap(), line);
    }
}

#[test]
fn pacer_seeds_roundtrip_through_display() {
    for s in seeds("pacer_spec") {
        let text = String::from_utf8(s).unwrap();
        match text.parse::<PacerConfig>() {
            Ok(c) => assert_eq!(
                c.to_string().parse::<PacerConfig>().unwrap().to_string(),
                c.to_string()
            ),
            Err(_) => assert_eq!(text, "fixed:0"),
        }
    }
}

#[test]
fn session_seeds_drive_both_ends_without_panicking() {
    let cfg = SessionConfig::default();
    for s in seeds("session_packets") {
        let mut rx = ReceiverSession::put(1, cfg);
        let src = MemSource((0..3000u32).map(|i| i as u8).collect());
        let mut tx = SenderSession::file(1, Box::new(src), [0; 32], "f", true, cfg);
        tx.on_event(Event::Start {
            now: Timestamp::ZERO,
        });
        rx.on_event(Event::Start {
            now: Timestamp::ZERO,
        });
        let mut rest = &s[..];
        let mut t = 0u64;
        let mut decoded = 0;
        while rest.len() >= 2 {
            let n = u16::from_be_bytes([rest[0], rest[1]]) as usize;
            let (dgram, tail) = rest[2..].split_at(n.min(rest.len() - 2));
            rest = tail;
            t += 10_000_000;
            let now = Timestamp(t);
            if let Ok(packet) = decode_packet(dgram, &cfg.wire) {
                decoded += 1;
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
        assert!(decoded > 0);
    }
}
