#![no_main]

use libfuzzer_sys::fuzz_target;
use nlhomog::config::parse_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_config(text) {
            // an accepted config must survive a round trip with the same hash
            let again = parse_config(&cfg.canonical_json()).expect("canonical form reparses");
            assert_eq!(cfg.hash(), again.hash());
        }
    }
});
