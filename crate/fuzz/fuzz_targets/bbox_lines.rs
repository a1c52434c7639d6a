#![no_main]

use libfuzzer_sys::fuzz_target;
use quadslam::simulator::corners_to_lines;

fuzz_target!(|data: &[u8]| {
    if data.len() < 64 {
        return;
    }
    let mut v = [0.0f64; 8];
    for (k, chunk) in data.chunks_exact(8).take(8).enumerate() {
        v[k] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    let corners = [[v[0], v[1]], [v[2], v[3]], [v[4], v[5]], [v[6], v[7]]];
    if let Ok(lines) = corners_to_lines(&corners) {
        for l in &lines {
            let c = l.coords();
            assert!(c.iter().all(|x| x.is_finite()));
            assert!((c.x.hypot(c.y) - 1.0).abs() < 1e-9);
        }
    }
});
