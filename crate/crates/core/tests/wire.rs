use std::fs;
use std::path::Path;

use proptest::prelude::*;
use saratoga::holes::ByteRange;
use saratoga::wire::*;

fn load_vector(name: &str) -> Vec<u8> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/vectors")
        .join(name);
    let text = fs::read_to_string(&path).unwrap();
    let digits: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.chars())
        .filter(|c| !c.is_whitespace())
        .collect();
    hex::decode(digits).unwrap()
}

fn header(session_id: u32, width: DescriptorWidth) -> PacketHeader {
    PacketHeader::new(session_id, width)
}

fn check_vector(name: &str, packet: Packet) {
    let cfg = WireConfig::default();
    let bytes = load_vector(name);
    assert_eq!(
        encode_packet(&packet, &cfg).unwrap(),
        bytes,
        "{name}: encode"
    );
    assert_eq!(
        decode_packet(&bytes, &cfg).unwrap(),
        packet,
        "{name}: decode"
    );
    assert_eq!(encoded_len(&packet), bytes.len(), "{name}: length");
}

#[test]
fn golden_vectors() {
    check_vector(
        "data_w16.hex",
        Packet {
            header: header(1, DescriptorWidth::W16),
            body: Body::Data(Data {
                offset: 0,
                solicit: None,
                payload: b"ab".to_vec(),
            }),
        },
    );
    check_vector(
        "request_get.hex",
        Packet {
            header: header(42, DescriptorWidth::W16),
            body: Body::Request(Request {
                direction: Direction::Get,
                path: "a/b.txt".into(),
            }),
        },
    );
    let mut digest = [0u8; 32];
    for (i, b) in digest.iter_mut().enumerate() {
        *b = i as u8;
    }
    check_vector(
        "metadata_w32.hex",
        Packet {
            header: header(7, DescriptorWidth::W32),
            body: Body::Metadata(Metadata {
                transfer_size: 65536,
                digest,
                path: "f.x".into(),
            }),
        },
    );
    let mut stream = header(1, DescriptorWidth::W64);
    stream.flags.streaming = true;
    check_vector(
        "metadata_stream.hex",
        Packet {
            header: stream,
            body: Body::Metadata(Metadata {
                transfer_size: u128::MAX,
                digest: [0; 32],
                path: String::new(),
            }),
        },
    );
    check_vector(
        "status_w64_echo.hex",
        Packet {
            header: header(9, DescriptorWidth::W64),
            body: Body::Status(Status {
                progress: 1000,
                echo: Some(5),
                holes: vec![ByteRange::new(2000, 3000)],
            }),
        },
    );
    let mut last = header(u32::MAX, DescriptorWidth::W128);
    last.flags.end_of_data = true;
    last.flags.status_requested = true;
    check_vector(
        "data_w128_last.hex",
        Packet {
            header: last,
            body: Body::Data(Data {
                offset: u128::MAX - 1,
                solicit: Some(1),
                payload: b"z".to_vec(),
            }),
        },
    );
}

#[test]
fn golden_data_starts_with_version_and_type() {
    let bytes = load_vector("data_w16.hex");
    assert_eq!(bytes[0], 0x13);
    assert_eq!(bytes.len(), 8 + 2 + 2);
}

fn width_strategy() -> impl Strategy<Value = DescriptorWidth> {
    prop_oneof![
        Just(DescriptorWidth::W16),
        Just(DescriptorWidth::W32),
        Just(DescriptorWidth::W64),
        Just(DescriptorWidth::W128),
    ]
}

/// Values in `[0, max]`, biased toward both ends.
fn bounded(max: u128) -> impl Strategy<Value = u128> {
    prop_oneof![
        any::<u128>().prop_map(move |v| if max == u128::MAX { v } else { v % (max + 1) }),
        (0u128..16).prop_map(move |d| max.saturating_sub(d)),
        0u128..16,
    ]
}

fn path_strategy() -> impl Strategy<Value = String> {
    prop_oneof![Just(String::new()), "[a-z0-9/._-]{1,40}", "\\PC{0,20}"]
        .prop_filter("path limit", |p| p.len() <= MAX_PATH_LEN)
}

fn holes_strategy(width: DescriptorWidth) -> impl Strategy<Value = Vec<ByteRange>> {
    let max = width.max_value();
    proptest::collection::vec(bounded(max), 0..40).prop_map(move |mut pts| {
        pts.sort_unstable();
        pts.dedup();
        let mut holes: Vec<ByteRange> = pts
            .chunks_exact(2)
            .map(|c| ByteRange::new(c[0], c[1]))
            .collect();
        holes.truncate(64);
        holes
    })
}

fn packet_strategy() -> impl Strategy<Value = Packet> {
    (width_strategy(), any::<u32>(), any::<[bool; 3]>()).prop_flat_map(|(width, id, flags)| {
        let mut h = PacketHeader::new(id, width);
        h.flags.end_of_data = flags[0];
        let request = (any::<bool>(), path_strategy()).prop_map(move |(get, path)| Packet {
            header: h,
            body: Body::Request(Request {
                direction: if get { Direction::Get } else { Direction::Put },
                path,
            }),
        });
        let streaming = flags[1];
        let metadata = (
            bounded(width.max_value()),
            any::<[u8; 32]>(),
            path_strategy(),
        )
            .prop_map(move |(size, digest, path)| {
                let mut h = h;
                h.flags.streaming = streaming;
                Packet {
                    header: h,
                    body: Body::Metadata(Metadata {
                        transfer_size: if streaming { u128::MAX } else { size },
                        digest,
                        path,
                    }),
                }
            });
        let solicit = flags[2];
        let data = (
            bounded(width.max_value()),
            any::<u32>(),
            proptest::collection::vec(any::<u8>(), 0..64),
        )
            .prop_map(move |(off, n, payload)| {
                let mut h = h;
                h.flags.status_requested = solicit;
                // bytes left before 2^bits, saturating for the 128-bit width
                let room = (width.max_value() - off).saturating_add(1);
                let payload = if (payload.len() as u128) > room {
                    payload[..room as usize].to_vec()
                } else {
                    payload
                };
                Packet {
                    header: h,
                    body: Body::Data(Data {
                        offset: off,
                        solicit: solicit.then_some(n),
                        payload,
                    }),
                }
            });
        let status = (
            bounded(width.max_value()),
            proptest::option::of(any::<u32>()),
            holes_strategy(width),
        )
            .prop_map(move |(progress, echo, holes)| Packet {
                header: h,
                body: Body::Status(Status {
                    progress,
                    echo,
                    holes,
                }),
            });
        prop_oneof![request, metadata, data, status]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn encode_decode_roundtrip(p in packet_strategy()) {
        let cfg = WireConfig::default();
        let bytes = encode_packet(&p, &cfg).unwrap();
        prop_assert_eq!(bytes.len(), encoded_len(&p));
        prop_assert!(bytes.len() <= cfg.max_datagram());
        let back = decode_packet(&bytes, &cfg).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(encode_packet(&back, &cfg).unwrap(), bytes);
    }

    #[test]
    fn width_is_minimal(size in any::<u128>()) {
        let w = select_descriptor_width(size);
        prop_assert!(size <= w.max_value());
        if let Some(narrower) = w.narrower() {
            prop_assert!(size > narrower.max_value());
        }
    }

    #[test]
    fn truncations_never_decode_to_the_original(p in packet_strategy(), cut in any::<prop::sample::Index>()) {
        let cfg = WireConfig::default();
        let bytes = encode_packet(&p, &cfg).unwrap();
        let n = cut.index(bytes.len());
        if let Ok(q) = decode_packet(&bytes[..n], &cfg) {
            // only Data can lose payload bytes and still parse
            prop_assert!(matches!(q.body, Body::Data(_)));
            prop_assert!(q != p);
        }
    }
}

#[test]
fn reserved_flag_bits_do_not_change_the_packet() {
    let cfg = WireConfig::default();
    let mut bytes = load_vector("data_w16.hex");
    let want = decode_packet(&bytes, &cfg).unwrap();
    for bits in [0x20u8, 0x40, 0x80, 0xe0] {
        bytes[1] |= bits;
        bytes[2] = 0xff;
        bytes[3] = 0x01;
        assert_eq!(decode_packet(&bytes, &cfg).unwrap(), want);
    }
}

#[test]
fn sixty_five_holes_are_rejected_on_encode() {
    let holes = (0..65u128)
        .map(|i| ByteRange::new(i * 10, i * 10 + 5))
        .collect();
    let p = Packet {
        header: header(1, DescriptorWidth::W32),
        body: Body::Status(Status {
            progress: 0,
            echo: None,
            holes,
        }),
    };
    assert!(matches!(
        encode_packet(&p, &WireConfig::default()),
        Err(WireError::OversizeField { field: "holes", .. })
    ));
}

#[test]
fn empty_input_is_truncated() {
    assert_eq!(
        decode_packet(&[], &WireConfig::default()),
        Err(WireError::Truncated)
    );
}
