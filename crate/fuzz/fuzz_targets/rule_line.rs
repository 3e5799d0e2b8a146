#![no_main]

use famas::abstraction::{parse_rule_line, RuleLine};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let RuleLine::Step { agent, action, state } = parse_rule_line(line) {
        assert!(!agent.is_empty() && !action.is_empty() && !state.is_empty());
        let rebuilt = format!("[{agent}] {action} => {state}");
        assert_eq!(parse_rule_line(&rebuilt), RuleLine::Step { agent, action, state });
    }
});
