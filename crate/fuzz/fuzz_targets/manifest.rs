#![no_main]

use libfuzzer_sys::fuzz_target;
use nlhomog::config::parse_manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = parse_manifest(text) {
            assert_eq!(m.config.hash(), m.config_hash);
        }
    }
});
