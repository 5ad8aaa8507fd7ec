#![no_main]

use libfuzzer_sys::fuzz_target;

use floodvision::kg::{load_kg, save_kg};

fuzz_target!(|data: &[u8]| {
    if let Ok(kg) = load_kg(data) {
        // anything accepted must survive a save/load round trip unchanged
        let bytes = save_kg(&kg);
        let again = load_kg(&bytes).expect("saved graph reloads");
        assert_eq!(kg, again);
        assert!(kg.validate().is_empty());
    }
});
