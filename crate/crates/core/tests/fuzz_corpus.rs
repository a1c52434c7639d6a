//! Replays the checked-in fuzz corpus through the fuzz targets' checks.

use std::fs;
use std::path::PathBuf;

use quadslam::harness::{RunManifest, TrialConfig};
use quadslam::simulator::{corners_to_lines, Dataset};

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus {}", dir.display());
    files.into_iter().map(|p| (p.display().to_string(), fs::read(&p).unwrap())).collect()
}

#[test]
fn dataset_corpus() {
    let mut accepted = 0;
    for (name, data) in corpus("dataset_parse") {
        let Ok(d) = Dataset::from_slice(&data) else { continue };
        accepted += 1;
        let text = d.to_json().unwrap();
        let back = Dataset::from_json(&text).unwrap();
        assert_eq!(back, d, "{name}");
        assert_eq!(back.to_json().unwrap(), text, "{name}");
    }
    assert!(accepted >= 2);
}

#[test]
fn bbox_corpus() {
    for (name, data) in corpus("bbox_lines") {
        assert!(data.len() >= 64, "{name}");
        let v: Vec<f64> = data.chunks_exact(8).take(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let corners = [[v[0], v[1]], [v[2], v[3]], [v[4], v[5]], [v[6], v[7]]];
        if let Ok(lines) = corners_to_lines(&corners) {
            for l in &lines {
                let c = l.coords();
                assert!(c.iter().all(|x| x.is_finite()), "{name}");
                assert!((c.x.hypot(c.y) - 1.0).abs() < 1e-9, "{name}");
            }
        }
    }
}

#[test]
fn manifest_corpus() {
    let mut manifests = 0;
    for (name, data) in corpus("manifest_parse") {
        let text = String::from_utf8(data).unwrap();
        if let Ok(cfg) = serde_json::from_str::<TrialConfig>(&text) {
            cfg.validate().unwrap();
        }
        if let Ok(m) = RunManifest::from_json(&text) {
            manifests += 1;
            assert_eq!(RunManifest::from_json(&m.to_json().unwrap()).unwrap(), m, "{name}");
        }
    }
    assert!(manifests >= 2);
}

mod mutations {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn mutated_datasets_never_panic(edits in proptest::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6)) {
            let (_, mut data) = corpus("dataset_parse").into_iter().find(|(n, _)| n.ends_with("truncated_lists.json")).unwrap();
            for (at, byte) in edits {
                let i = at.index(data.len());
                data[i] = byte;
            }
            if let Ok(d) = Dataset::from_slice(&data) {
                let text = d.to_json().unwrap();
                prop_assert_eq!(Dataset::from_json(&text).unwrap(), d);
            }
        }
    }
}
