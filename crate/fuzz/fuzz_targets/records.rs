#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(records) = famas::abstraction::parse_records(text) {
        // Any parsed set assembles against a manifest naming its runs.
        let mut runs: Vec<usize> = records.iter().map(|r| r.run_id).collect();
        runs.sort_unstable();
        runs.dedup();
        let manifest = famas::abstraction::LogManifest {
            task_id: "t".into(),
            runs: runs
                .into_iter()
                .map(|run_id| famas::abstraction::ManifestRun {
                    run_id,
                    outcome: famas::model::Outcome::Failure,
                })
                .collect(),
        };
        let _ = famas::abstraction::assemble_logs(&manifest, records);
    }
});
