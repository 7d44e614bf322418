#![no_main]

use libfuzzer_sys::fuzz_target;
use saratoga::trace::parse_line;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(r) = parse_line(line) {
        let again = serde_json::to_string(&r).expect("records serialise");
        assert_eq!(parse_line(&again).ok(), Some(r));
    }
});
