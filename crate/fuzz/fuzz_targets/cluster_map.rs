#![no_main]

use famas::clustering::parse_cluster_map;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(map) = parse_cluster_map(text) {
        assert_eq!(parse_cluster_map(&map.to_json()).expect("written maps parse"), map);
    }
});
