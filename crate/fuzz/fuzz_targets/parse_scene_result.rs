#![no_main]

use libfuzzer_sys::fuzz_target;

use floodvision::engine::SceneResult;

fuzz_target!(|data: &[u8]| {
    if let Ok(result) = SceneResult::from_json(data) {
        // re-serialization of an accepted file parses back identically
        let again = SceneResult::from_json(result.to_json_pretty().as_bytes())
            .expect("serialized result re-parses");
        assert_eq!(again, result);
    }
});
