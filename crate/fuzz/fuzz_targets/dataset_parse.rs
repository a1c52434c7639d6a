#![no_main]

use libfuzzer_sys::fuzz_target;
use quadslam::simulator::Dataset;

fuzz_target!(|data: &[u8]| {
    let Ok(dataset) = Dataset::from_slice(data) else {
        return;
    };
    // anything accepted must serialize and read back unchanged
    let text = dataset.to_json().expect("accepted dataset serializes");
    let back = Dataset::from_json(&text).expect("serialized dataset parses");
    assert_eq!(back, dataset);
    assert_eq!(back.to_json().unwrap(), text);
    let _ = dataset.bbox_detections();
});
