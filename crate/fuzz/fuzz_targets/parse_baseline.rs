#![no_main]

use libfuzzer_sys::fuzz_target;

use floodvision::gateway::parse_baseline_reply;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(depth) = parse_baseline_reply(text) {
        assert!(depth >= 0.0 && depth.is_finite());
    }
});
