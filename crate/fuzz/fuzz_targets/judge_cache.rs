#![no_main]

use famas::clustering::{CachingJudge, ExactJudge};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = CachingJudge::with_cache_text(ExactJudge, text);
    }
});
