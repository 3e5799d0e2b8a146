//! JSON Lines log records plus the per-task run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RawLog;
use crate::error::{Error, Result};
use crate::model::Outcome;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub run_id: usize,
    pub seq: u64,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogManifest {
    pub task_id: String,
    pub runs: Vec<ManifestRun>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub run_id: usize,
    pub outcome: Outcome,
}

/// Parses one record per non-blank line.
pub fn parse_records(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::format("log record", format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<LogManifest> {
    let manifest: LogManifest = serde_json::from_str(text)?;
    let mut seen = std::collections::BTreeSet::new();
    for run in &manifest.runs {
        if !seen.insert(run.run_id) {
            return Err(Error::format(
                "log manifest",
                format!("run {} listed twice", run.run_id),
            ));
        }
    }
    Ok(manifest)
}

/// Groups records into one log per manifest run, ordered by `seq`.
pub fn assemble_logs(manifest: &LogManifest, records: Vec<LogRecord>) -> Result<Vec<RawLog>> {
    let mut by_run: BTreeMap<usize, Vec<LogRecord>> = BTreeMap::new();
    for r in records {
        by_run.entry(r.run_id).or_default().push(r);
    }
    let mut logs = Vec::with_capacity(manifest.runs.len());
    let mut runs = manifest.runs.clone();
    runs.sort_by_key(|r| r.run_id);
    for run in &runs {
        let mut recs = by_run.remove(&run.run_id).unwrap_or_default();
        if recs.is_empty() {
            return Err(Error::format(
                "log records",
                format!("run {} has no records", run.run_id),
            ));
        }
        recs.sort_by_key(|r| r.seq);
        if let Some(w) = recs.windows(2).find(|w| w[0].seq == w[1].seq) {
            return Err(Error::format(
                "log records",
                format!("run {} repeats seq {}", run.run_id, w[0].seq),
            ));
        }
        logs.push(RawLog {
            task_id: manifest.task_id.clone(),
            run_id: run.run_id,
            records: recs.into_iter().map(|r| r.content).collect(),
            outcome: run.outcome,
        });
    }
    if let Some(orphan) = by_run.keys().next() {
        return Err(Error::format(
            "log records",
            format!("run {orphan} is not listed in the manifest"),
        ));
    }
    Ok(logs)
}

pub fn load_raw_logs(records_path: &Path, manifest_path: &Path) -> Result<Vec<RawLog>> {
    let records = std::fs::read_to_string(records_path).map_err(|e| Error::io(records_path, e))?;
    let manifest = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    assemble_logs(&parse_manifest(&manifest)?, parse_records(&records)?)
}

/// Renders logs back into JSON Lines records and a manifest.
pub fn logs_to_jsonl(logs: &[RawLog]) -> (String, LogManifest) {
    let mut out = String::new();
    for log in logs {
        for (seq, content) in log.records.iter().enumerate() {
            let rec = LogRecord {
                run_id: log.run_id,
                seq: seq as u64,
                content: content.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
            out.push('\n');
        }
    }
    let manifest = LogManifest {
        task_id: logs.first().map(|l| l.task_id.clone()).unwrap_or_default(),
        runs: logs
            .iter()
            .map(|l| ManifestRun {
                run_id: l.run_id,
                outcome: l.outcome,
            })
            .collect(),
    };
    (out, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MANIFEST: &str = r#"{"task_id":"t1","runs":[{"run_id":0,"outcome":"failure"},{"run_id":1,"outcome":"success"}]}"#;

    #[test]
    fn records_are_grouped_and_sorted() {
        let jsonl = r#"{"run_id":1,"seq":2,"content":"b2"}
{"run_id":0,"seq":0,"content":"a0"}

{"run_id":1,"seq":1,"content":"b1"}
"#;
        let logs = assemble_logs(&parse_manifest(MANIFEST).unwrap(), parse_records(jsonl).unwrap()).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(logs[0].records, vec!["a0"]);
        assert_eq!(logs[1].records, vec!["b1", "b2"]);
        assert_eq!(logs[1].outcome, Outcome::Success);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let err = parse_records("{\"run_id\":0,\"seq\":0,\"content\":\"x\"}\nnot json\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn orphans_and_empty_runs_are_errors() {
        let m = parse_manifest(MANIFEST).unwrap();
        let only0 = parse_records(r#"{"run_id":0,"seq":0,"content":"a"}"#).unwrap();
        assert!(assemble_logs(&m, only0).is_err());
        let extra = parse_records(
            "{\"run_id\":0,\"seq\":0,\"content\":\"a\"}\n{\"run_id\":1,\"seq\":0,\"content\":\"b\"}\n{\"run_id\":7,\"seq\":0,\"content\":\"c\"}",
        )
        .unwrap();
        assert!(assemble_logs(&m, extra).is_err());
    }

    #[test]
    fn duplicate_seq_is_an_error() {
        let m = parse_manifest(r#"{"task_id":"t","runs":[{"run_id":0,"outcome":"failure"}]}"#).unwrap();
        let recs = parse_records(
            "{\"run_id\":0,\"seq\":4,\"content\":\"a\"}\n{\"run_id\":0,\"seq\":4,\"content\":\"b\"}",
        )
        .unwrap();
        assert!(assemble_logs(&m, recs).is_err());
    }

    #[test]
    fn jsonl_rendering_reassembles() {
        let logs = vec![RawLog {
            task_id: "t".into(),
            run_id: 0,
            records: vec!["x".into(), "y".into()],
            outcome: Outcome::Failure,
        }];
        let (text, manifest) = logs_to_jsonl(&logs);
        assert_eq!(assemble_logs(&manifest, parse_records(&text).unwrap()).unwrap(), logs);
    }
}
