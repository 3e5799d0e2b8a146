//! Turning raw run logs into primitive agent-action-state triples.
//!
//! Logs are packed into chunks on record boundaries, each chunk goes through
//! an [`Extractor`], and the emitted triples are numbered 1..T across the
//! whole run.

mod llm_extractor;
mod rawlog;
mod rules;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use llm_extractor::{parse_llm_output, LlmExtractor};
pub use rawlog::{
    assemble_logs, load_raw_logs, logs_to_jsonl, parse_manifest, parse_records, LogManifest, LogRecord,
    ManifestRun,
};
pub use rules::{parse_rule_line, RuleLine, RulesExtractor};

use crate::error::{Error, Result};
use crate::model::Outcome;

pub const DEFAULT_CHAR_BUDGET: usize = 12_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLog {
    pub task_id: String,
    pub run_id: usize,
    pub records: Vec<String>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub log_run_id: usize,
    pub chunk_index: usize,
    /// Offset of the first record of this chunk within the log.
    pub first_record: usize,
    pub records: Vec<String>,
    pub char_budget: usize,
}

impl Chunk {
    pub fn char_len(&self) -> usize {
        self.records.iter().map(|r| r.chars().count()).sum()
    }
}

/// Greedy packing of whole records into chunks of at most `char_budget`
/// characters. A record longer than the budget gets a chunk of its own.
pub fn chunk_log(log: &RawLog, char_budget: usize) -> Result<Vec<Chunk>> {
    if char_budget == 0 {
        return Err(Error::InvalidParameter("char_budget must be at least 1".into()));
    }
    let mut chunks = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut current_len = 0usize;
    let mut first_record = 0usize;

    let flush = |current: &mut Vec<String>, first_record: usize, chunks: &mut Vec<Chunk>| {
        chunks.push(Chunk {
            log_run_id: log.run_id,
            chunk_index: chunks.len(),
            first_record,
            records: std::mem::take(current),
            char_budget,
        });
    };

    for (i, record) in log.records.iter().enumerate() {
        let len = record.chars().count();
        if !current.is_empty() && current_len + len > char_budget {
            flush(&mut current, first_record, &mut chunks);
            current_len = 0;
        }
        if current.is_empty() {
            first_record = i;
        }
        current.push(record.clone());
        current_len += len;
    }
    if !current.is_empty() {
        flush(&mut current, first_record, &mut chunks);
    }
    Ok(chunks)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveTriple {
    pub agent_name: String,
    pub action_desc: String,
    pub state_desc: String,
    pub source_run: usize,
    /// 1-based, strictly increasing within a run.
    pub source_step: usize,
    /// Record of the raw log this triple came from, when the extractor knows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_record: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskContext<'a> {
    pub task_id: &'a str,
    pub run_id: usize,
}

/// One item of extractor output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractedItem {
    Triple {
        agent: String,
        action: String,
        state: String,
        /// Record offset inside the chunk.
        record: Option<usize>,
    },
    /// Output that could not be read as a triple; skipped and tallied.
    Malformed(String),
}

/// Failure of an external service (LLM endpoint, runner) after retries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceError(pub String);

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ServiceError {}

/// Reads one chunk and returns the steps it describes, in order.
///
/// Implementations used with [`extract_suite`] are called from several
/// threads at once, one run per thread.
pub trait Extractor: Send + Sync {
    fn name(&self) -> &str;

    fn extract(&self, chunk: &Chunk, ctx: &TaskContext<'_>) -> Result<Vec<ExtractedItem>, ServiceError>;

    /// Provenance lines (template hashes and the like) for diagnostics.
    fn fingerprint(&self) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionDiagnostics {
    pub run_id: usize,
    pub chunks: usize,
    pub emitted: usize,
    pub skipped_malformed: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub malformed_samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub primitives: Vec<PrimitiveTriple>,
    pub diagnostics: ExtractionDiagnostics,
}

const MALFORMED_SAMPLE_LIMIT: usize = 5;

pub fn extract_primitives(log: &RawLog, extractor: &dyn Extractor, char_budget: usize) -> Result<Extraction> {
    let chunks = chunk_log(log, char_budget)?;
    let ctx = TaskContext {
        task_id: &log.task_id,
        run_id: log.run_id,
    };
    let mut primitives = Vec::new();
    let mut diagnostics = ExtractionDiagnostics {
        run_id: log.run_id,
        chunks: chunks.len(),
        ..Default::default()
    };
    for chunk in &chunks {
        let items = extractor.extract(chunk, &ctx).map_err(|e| Error::Extraction {
            run_id: log.run_id,
            chunk_index: chunk.chunk_index,
            reason: e.0,
        })?;
        for item in items {
            match item {
                ExtractedItem::Triple {
                    agent,
                    action,
                    state,
                    record,
                } => {
                    let (agent, action, state) = (agent.trim(), action.trim(), state.trim());
                    if agent.is_empty() || action.is_empty() || state.is_empty() {
                        diagnostics.skipped_malformed += 1;
                        push_sample(&mut diagnostics, format!("{agent} | {action} | {state}"));
                        continue;
                    }
                    primitives.push(PrimitiveTriple {
                        agent_name: agent.to_string(),
                        action_desc: action.to_string(),
                        state_desc: state.to_string(),
                        source_run: log.run_id,
                        source_step: primitives.len() + 1,
                        source_record: record.map(|r| chunk.first_record + r),
                    });
                }
                ExtractedItem::Malformed(text) => {
                    diagnostics.skipped_malformed += 1;
                    push_sample(&mut diagnostics, text);
                }
            }
        }
    }
    diagnostics.emitted = primitives.len();
    Ok(Extraction {
        primitives,
        diagnostics,
    })
}

fn push_sample(d: &mut ExtractionDiagnostics, text: String) {
    if d.malformed_samples.len() < MALFORMED_SAMPLE_LIMIT {
        d.malformed_samples.push(text);
    }
}

/// Extracts every log, running up to `parallelism` runs at once.
///
/// Output order matches `logs`. The first failing run (in log order) is
/// reported.
pub fn extract_suite(
    logs: &[RawLog],
    extractor: &dyn Extractor,
    char_budget: usize,
    parallelism: usize,
) -> Result<Vec<Extraction>> {
    let workers = parallelism.max(1).min(logs.len().max(1));
    if workers == 1 {
        return logs
            .iter()
            .map(|log| extract_primitives(log, extractor, char_budget))
            .collect();
    }
    let mut slots: Vec<Option<Result<Extraction>>> = (0..logs.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= logs.len() {
                    break;
                }
                let r = extract_primitives(&logs[i], extractor, char_budget);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every log is visited"))
        .collect()
}

/// Serialized output of the abstraction stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitivesDocument {
    pub version: u32,
    pub task_id: String,
    pub runs: Vec<PrimitiveRun>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveRun {
    pub run_id: usize,
    pub outcome: Outcome,
    pub initial_state: String,
    pub primitives: Vec<PrimitiveTriple>,
}

impl PrimitiveRun {
    pub fn from_extraction(log: &RawLog, extraction: Extraction) -> Self {
        Self {
            run_id: log.run_id,
            outcome: log.outcome,
            initial_state: log.task_id.clone(),
            primitives: extraction.primitives,
        }
    }
}

pub fn parse_primitives(text: &str) -> Result<PrimitivesDocument> {
    let doc: PrimitivesDocument = serde_json::from_str(text)?;
    for run in &doc.runs {
        let mut last = 0;
        for p in &run.primitives {
            if p.source_run != run.run_id || p.source_step <= last {
                return Err(Error::format(
                    "primitives document",
                    format!("run {} has out-of-order or foreign step {}", run.run_id, p.source_step),
                ));
            }
            last = p.source_step;
        }
    }
    Ok(doc)
}
