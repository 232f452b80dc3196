use std::fs;
use std::path::PathBuf;

use nlhomog::config::{parse_config, parse_eps_list, parse_manifest};
use nlhomog::presets::{InitialPreset, PotentialPreset};

fn corpus(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut seeds: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&path).unwrap())
        })
        .collect();
    seeds.sort();
    assert!(!seeds.is_empty(), "no seeds in {}", dir.display());
    seeds
}

#[test]
fn config_seeds() {
    for (name, text) in corpus("config_json") {
        let parsed = parse_config(&text);
        let should_fail = name.starts_with("bad_") || name == "unknown_field";
        assert_eq!(parsed.is_err(), should_fail, "{name}: {parsed:?}");
        if let Ok(cfg) = parsed {
            assert_eq!(parse_config(&cfg.canonical_json()).unwrap().hash(), cfg.hash(), "{name}");
        }
    }
}

#[test]
fn eps_list_seeds() {
    for (name, text) in corpus("eps_list") {
        let parsed = parse_eps_list(&text);
        let should_fail = name == "increasing" || name == "zero_denominator";
        assert_eq!(parsed.is_err(), should_fail, "{name}: {parsed:?}");
        if let Ok(list) = parsed {
            assert!(list.windows(2).all(|w| w[0] > w[1]) && list.iter().all(|e| *e > 0.0), "{name}");
        }
    }
}

#[test]
fn preset_name_seeds() {
    for (name, text) in corpus("preset_names") {
        let potential = text.parse::<PotentialPreset>();
        let initial = text.parse::<InitialPreset>();
        assert_eq!(potential.is_ok() || initial.is_ok(), name != "wrong_case", "{name}");
        if let Ok(v) = potential {
            assert_eq!(v.name(), text);
        }
    }
}

#[test]
fn manifest_seeds() {
    for (name, text) in corpus("manifest") {
        let parsed = parse_manifest(&text);
        assert_eq!(parsed.is_ok(), name == "coefficients", "{name}: {parsed:?}");
        if let Ok(m) = parsed {
            assert_eq!(m.config.hash(), m.config_hash);
        }
    }
}
