#![no_main]

use libfuzzer_sys::fuzz_target;
use saratoga::wire::{decode_packet, encode_packet, WireConfig};

fuzz_target!(|data: &[u8]| {
    let tight = WireConfig {
        max_payload: 16,
        max_holes_per_status: 2,
    };
    for cfg in [WireConfig::default(), tight] {
        let Ok(p) = decode_packet(data, &cfg) else {
            continue;
        };
        p.validate(&cfg).expect("decoded packets validate");
        let bytes = encode_packet(&p, &cfg).expect("decoded packets re-encode");
        assert_eq!(decode_packet(&bytes, &cfg).as_ref(), Ok(&p));
    }
});
