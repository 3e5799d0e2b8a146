#![no_main]

use famas::suite_file::{parse_suite, suite_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(suite) = parse_suite(text) else {
        return;
    };
    let again = parse_suite(&suite_to_json(&suite)).expect("written suites parse");
    assert_eq!(suite, again);
    let _ = famas::model::validate_suite(&suite);
});
