#![no_main]

use libfuzzer_sys::fuzz_target;
use saratoga::rate::PacerConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = s.parse::<PacerConfig>() {
        let shown = cfg.to_string();
        let back: PacerConfig = shown.parse().expect("display output parses");
        assert_eq!(back.to_string(), shown);
    }
});
