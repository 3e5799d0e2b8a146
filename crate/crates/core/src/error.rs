use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("trajectory {id} has no steps")]
    EmptyTrajectory { id: usize },

    #[error("cluster {cluster_id} carries conflicting labels ({first} vs {second})")]
    ConflictingCluster {
        cluster_id: usize,
        first: String,
        second: String,
    },

    #[error("suite failed validation with {} violation(s): {}", .0.len(), summarize(.0))]
    InvalidSuite(Vec<Violation>),

    #[error("triple with cluster id {cluster_id} is not in the universe")]
    UnknownTriple { cluster_id: usize },

    #[error("triple with cluster id {cluster_id} does not occur in the failing trajectory")]
    NotCandidate { cluster_id: usize },

    #[error("agent `{agent}` is never active in the suite")]
    InactiveAgent { agent: String },

    #[error("no candidate triples to rank")]
    EmptyRanking,

    #[error("extraction failed for run {run_id} at chunk {chunk_index}: {reason}")]
    Extraction {
        run_id: usize,
        chunk_index: usize,
        reason: String,
    },

    #[error("judge failed for agent `{agent}` comparing `{left}` with `{right}`: {reason}")]
    Judge {
        agent: String,
        left: String,
        right: String,
        reason: String,
    },

    #[error("judge contract violated for agent `{agent}`: `{description}` judged different from itself")]
    NonReflexiveJudge { agent: String, description: String },

    #[error("primitive at run {run}, step {step} belongs to no cluster")]
    Unclustered { run: usize, step: usize },

    #[error("only {usable} usable replay(s); at least {required} are required")]
    InsufficientReplays { usable: usize, required: usize },

    #[error("runner failed: {0}")]
    Runner(String),

    #[error("annotated step {step} is outside the failing trajectory (1..={len})")]
    Annotation { step: usize, len: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .take(3)
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
