#![no_main]

use libfuzzer_sys::fuzz_target;
use nlhomog::config::parse_eps_list;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(list) = parse_eps_list(text) {
            assert!(!list.is_empty());
            assert!(list.iter().all(|e| e.is_finite() && *e > 0.0));
            assert!(list.windows(2).all(|w| w[0] > w[1]));
        }
    }
});
