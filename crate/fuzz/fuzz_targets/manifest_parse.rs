#![no_main]

use libfuzzer_sys::fuzz_target;
use quadslam::harness::{RunManifest, TrialConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = serde_json::from_str::<TrialConfig>(text) {
        let _ = cfg.validate();
    }
    if let Ok(m) = RunManifest::from_json(text) {
        let again = RunManifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(again.seeds, m.seeds);
        let _ = m.config.validate();
    }
});
