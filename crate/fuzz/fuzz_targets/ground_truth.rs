#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(truths) = famas::evaluation::parse_ground_truth(text) {
        assert!(truths.iter().all(|t| t.mistake_step >= 1));
    }
});
