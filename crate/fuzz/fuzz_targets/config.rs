#![no_main]

use famas::config::{FileConfig, Overrides, Settings};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = FileConfig::parse(text) {
        let _ = Settings::resolve(&file, |_| None, &Overrides::default());
    }
});
