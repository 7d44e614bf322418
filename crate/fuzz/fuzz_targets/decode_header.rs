#![no_main]

use libfuzzer_sys::fuzz_target;
use saratoga::wire::{decode_header, decode_packet, WireConfig, HEADER_LEN};

fuzz_target!(|data: &[u8]| {
    let header = decode_header(data);
    if let Ok((ptype, h)) = &header {
        assert!(data.len() >= HEADER_LEN);
        if let Ok(p) = decode_packet(data, &WireConfig::default()) {
            assert_eq!(p.packet_type(), *ptype);
            assert_eq!(p.header, *h);
        }
    } else {
        assert!(decode_packet(data, &WireConfig::default()).is_err());
    }
});
