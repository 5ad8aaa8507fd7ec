#![no_main]

use std::collections::BTreeSet;

use libfuzzer_sys::fuzz_target;

use floodvision::eval::load_manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = load_manifest(data) {
        let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids.len(), records.len(), "accepted manifests have unique ids");
        for r in &records {
            assert!(r.ground_truth_cm >= 0.0);
        }
    }
});
