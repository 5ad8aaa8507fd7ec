#![no_main]

use libfuzzer_sys::fuzz_target;

use floodvision::kg::canonicalize;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let once = canonicalize(text);
    assert_eq!(canonicalize(&once), once, "canonicalize must be idempotent");
    assert!(
        once.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == ' '),
        "output restricted to lowercase alphanumerics and spaces"
    );
    assert!(!once.contains("  "));
    assert!(!once.starts_with(' ') && !once.ends_with(' '));
});
