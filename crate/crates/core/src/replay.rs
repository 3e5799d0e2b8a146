//! Collecting replays of a task through a pluggable runner.

use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::abstraction::{LogRecord, RawLog, ServiceError};
use crate::error::{Error, Result};
use crate::model::Outcome;

pub const RUNNER_ENV: &str = "FAMAS_RUNNER_CMD";

/// Replays needed besides the failing root for any contrast.
pub const MIN_REPLAYS: usize = 2;

/// Executes a task once. Either a complete log comes back or the run failed
/// as a whole.
pub trait Runner: Send + Sync {
    fn run(&self, task_id: &str, run_id: usize, seed: u64) -> Result<RawLog, ServiceError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRequest {
    pub task_id: String,
    pub run_id: usize,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OutputLine {
    End { outcome: Outcome },
    Record(LogRecord),
}

/// Reads runner stdout: record lines followed by one `{"outcome": ...}` line.
pub fn parse_runner_output(text: &str, task_id: &str, run_id: usize) -> Result<RawLog, ServiceError> {
    let mut records: Vec<LogRecord> = Vec::new();
    let mut outcome = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if outcome.is_some() {
            return Err(ServiceError(format!("line {}: output continues after the outcome line", n + 1)));
        }
        match serde_json::from_str::<OutputLine>(line) {
            Ok(OutputLine::End { outcome: o }) => outcome = Some(o),
            Ok(OutputLine::Record(r)) => {
                if r.run_id != run_id {
                    return Err(ServiceError(format!(
                        "line {}: record for run {} in output of run {run_id}",
                        n + 1,
                        r.run_id
                    )));
                }
                records.push(r);
            }
            Err(e) => return Err(ServiceError(format!("line {}: {e}", n + 1))),
        }
    }
    let outcome = outcome.ok_or_else(|| ServiceError("no outcome line; stream is incomplete".into()))?;
    records.sort_by_key(|r| r.seq);
    if records.windows(2).any(|w| w[0].seq == w[1].seq) {
        return Err(ServiceError("duplicate record seq".into()));
    }
    Ok(RawLog {
        task_id: task_id.to_string(),
        run_id,
        records: records.into_iter().map(|r| r.content).collect(),
        outcome,
    })
}

/// Runs a shell command per replay, passing a [`RunRequest`] on stdin.
#[derive(Debug, Clone)]
pub struct SubprocessRunner {
    command: String,
}

impl SubprocessRunner {
    pub fn new(command: impl Into<String>) -> Self {
        Self { command: command.into() }
    }

    pub fn from_env() -> Result<Self> {
        std::env::var(RUNNER_ENV)
            .ok()
            .filter(|c| !c.trim().is_empty())
            .map(Self::new)
            .ok_or_else(|| Error::Runner(format!("{RUNNER_ENV} is not set")))
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl Runner for SubprocessRunner {
    fn run(&self, task_id: &str, run_id: usize, seed: u64) -> Result<RawLog, ServiceError> {
        let request = serde_json::to_string(&RunRequest {
            task_id: task_id.to_string(),
            run_id,
            seed,
        })
        .expect("requests serialize");
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ServiceError(format!("cannot start runner: {e}")))?;
        if let Some(mut stdin) = child.stdin.take() {
            // A runner that ignores stdin may close it early.
            let _ = stdin.write_all(request.as_bytes());
        }
        let out = child
            .wait_with_output()
            .map_err(|e| ServiceError(format!("runner did not finish: {e}")))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(ServiceError(format!("runner exited with {}: {}", out.status, stderr.trim())));
        }
        let stdout = String::from_utf8(out.stdout).map_err(|_| ServiceError("runner output is not UTF-8".into()))?;
        parse_runner_output(&stdout, task_id, run_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRun {
    pub run_id: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    /// Usable replays in run-id order.
    pub logs: Vec<RawLog>,
    pub dropped: Vec<DroppedRun>,
}

/// Invokes runs `1..=k` with seeds `base_seed + run_id`, at most
/// `parallelism` at a time. Failed runs are dropped and reported.
pub fn replay_task(task_id: &str, k: usize, runner: &dyn Runner, base_seed: u64, parallelism: usize) -> Result<ReplayOutcome> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let seed_of = |run: usize| base_seed.wrapping_add(run as u64);
    let invoke = |run: usize| {
        let r = runner.run(task_id, run, seed_of(run));
        if let Err(e) = &r {
            tracing::warn!(run, reason = %e.0, "replay dropped");
        }
        r
    };
    let results: Vec<Result<RawLog, ServiceError>> = if parallelism <= 1 {
        (1..=k).map(invoke).collect()
    } else {
        let next = AtomicUsize::new(1);
        let slots: Mutex<Vec<Option<Result<RawLog, ServiceError>>>> = Mutex::new((0..k).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..parallelism.min(k) {
                scope.spawn(|| loop {
                    let run = next.fetch_add(1, Ordering::SeqCst);
                    if run > k {
                        break;
                    }
                    let r = invoke(run);
                    slots.lock().expect("worker panicked")[run - 1] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("worker panicked")
            .into_iter()
            .map(|s| s.expect("every run is visited"))
            .collect()
    };

    let mut logs = Vec::new();
    let mut dropped = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let run_id = i + 1;
        match r {
            Ok(mut log) => {
                log.run_id = run_id;
                logs.push(log);
            }
            Err(e) => dropped.push(DroppedRun {
                run_id,
                seed: seed_of(run_id),
                reason: e.0,
            }),
        }
    }
    if logs.len() < MIN_REPLAYS {
        return Err(Error::InsufficientReplays {
            usable: logs.len(),
            required: MIN_REPLAYS,
        });
    }
    Ok(ReplayOutcome { logs, dropped })
}
