#![no_main]

use libfuzzer_sys::fuzz_target;

use floodvision::gateway::{parse_observation, serialize_observation};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(obs) = parse_observation(text, "fuzz") {
        // accepted replies satisfy the schema invariants
        assert!(obs.objects.len() <= 3);
        for o in &obs.objects {
            assert!(o.provisional_height_cm > 0.0);
            assert!((0.0..=1.0).contains(&o.submerged_ratio));
        }
        // and round-trip through the wire schema
        let again = parse_observation(&serialize_observation(&obs.objects), "fuzz")
            .expect("serialized observation re-parses");
        assert_eq!(again.objects, obs.objects);
    }
});
