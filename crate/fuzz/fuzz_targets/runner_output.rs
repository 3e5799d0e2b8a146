#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&run, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    if let Ok(log) = famas::replay::parse_runner_output(text, "t", usize::from(run)) {
        assert_eq!(log.run_id, usize::from(run));
    }
});
