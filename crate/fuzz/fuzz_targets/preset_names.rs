#![no_main]

use libfuzzer_sys::fuzz_target;
use nlhomog::presets::{InitialPreset, PotentialPreset};

fuzz_target!(|data: &[u8]| {
    if let Ok(name) = std::str::from_utf8(data) {
        if let Ok(v) = name.parse::<PotentialPreset>() {
            assert_eq!(v.name(), name);
        }
        let _ = name.parse::<InitialPreset>();
    }
});
