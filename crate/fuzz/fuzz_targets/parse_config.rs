#![no_main]

use libfuzzer_sys::fuzz_target;

use floodvision::config::AppConfig;

fuzz_target!(|data: &[u8]| {
    let _ = AppConfig::from_json(data);
});
