//! Top-1 attribution verdicts and accuracy aggregation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::abstraction::{PrimitiveRun, RawLog};
use crate::clustering::ClusterMap;
use crate::error::{Error, Result};
use crate::model::{normalize_agent_name, Outcome};
use crate::spectrum::Ranking;

/// Annotated cause of one failure case. `mistake_step` is 1-based into the
/// root run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub task_id: String,
    pub mistake_agent: String,
    pub mistake_step: usize,
}

/// Reads one ground-truth object or a list of them.
pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruth>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(GroundTruth),
        Many(Vec<GroundTruth>),
    }
    let truths = match serde_json::from_str(text)? {
        OneOrMany::One(t) => vec![t],
        OneOrMany::Many(ts) => ts,
    };
    for t in &truths {
        if t.mistake_step == 0 {
            return Err(Error::format("ground truth", format!("{}: mistake_step is 1-based", t.task_id)));
        }
        if normalize_agent_name(&t.mistake_agent).is_empty() {
            return Err(Error::format("ground truth", format!("{}: mistake_agent is empty", t.task_id)));
        }
    }
    Ok(truths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub agent_correct: bool,
    pub action_correct: bool,
    pub top1_unique: bool,
}

/// Scores the ranking's first entry against the annotation.
///
/// A tied first place is never correct. The action is correct when the
/// annotated step is one of the root-run members of the top cluster.
pub fn judge_attribution(ranking: &Ranking, clusters: &ClusterMap, truth: &GroundTruth) -> Result<Verdict> {
    if truth.mistake_step == 0 || truth.mistake_step > ranking.root_steps {
        return Err(Error::Annotation {
            step: truth.mistake_step,
            len: ranking.root_steps,
        });
    }
    let top = ranking.top1().ok_or(Error::EmptyRanking)?;
    if !ranking.top1_unique() {
        return Ok(Verdict {
            agent_correct: false,
            action_correct: false,
            top1_unique: false,
        });
    }
    let agent_correct = top.triple.agent.name == normalize_agent_name(&truth.mistake_agent);
    let action_correct = agent_correct
        && clusters
            .get(top.triple.cluster_id)
            .is_some_and(|c| c.steps_in_run(0).any(|s| s == truth.mistake_step));
    Ok(Verdict {
        agent_correct,
        action_correct,
        top1_unique: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub total: usize,
    pub agent_correct: usize,
    pub action_correct: usize,
    pub agent_level: f64,
    pub action_level: f64,
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "agent-level {:.2}% ({}/{}), action-level {:.2}% ({}/{})",
            self.agent_level, self.agent_correct, self.total, self.action_level, self.action_correct, self.total
        )
    }
}

pub fn percentage(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

pub fn aggregate_accuracy(verdicts: &[Verdict]) -> Result<Accuracy> {
    if verdicts.is_empty() {
        return Err(Error::InvalidParameter("no verdicts to aggregate".into()));
    }
    let total = verdicts.len();
    let agent_correct = verdicts.iter().filter(|v| v.agent_correct).count();
    let action_correct = verdicts.iter().filter(|v| v.action_correct).count();
    Ok(Accuracy {
        total,
        agent_correct,
        action_correct,
        agent_level: percentage(agent_correct, total),
        action_level: percentage(action_correct, total),
    })
}

/// How an annotated raw record maps onto abstracted root steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Exactly one abstract step came from the record.
    Exact(usize),
    /// The record was split into several steps.
    Ambiguous(Vec<usize>),
    /// No step came from the record.
    Missing,
}

/// Raw record index to the 1-based abstract steps extracted from it.
pub fn alignment_map(root: &PrimitiveRun) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for p in &root.primitives {
        if let Some(r) = p.source_record {
            map.entry(r).or_default().push(p.source_step);
        }
    }
    map
}

pub fn align_record(root: &PrimitiveRun, record: usize) -> Alignment {
    match alignment_map(root).remove(&record) {
        None => Alignment::Missing,
        Some(steps) if steps.len() == 1 => Alignment::Exact(steps[0]),
        Some(steps) => Alignment::Ambiguous(steps),
    }
}

/// A failure case in the benchmark's native layout: a message history and
/// a 0-based index of the decisive message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WhoWhenCase {
    pub task_id: String,
    pub log: RawLog,
    pub mistake_agent: String,
    pub mistake_record: usize,
}

impl WhoWhenCase {
    /// Converts the annotation to an abstract-step ground truth, if the
    /// annotated message maps to exactly one step.
    pub fn ground_truth(&self, root: &PrimitiveRun) -> (Alignment, Option<GroundTruth>) {
        let alignment = align_record(root, self.mistake_record);
        let truth = match alignment {
            Alignment::Exact(step) => Some(GroundTruth {
                task_id: self.task_id.clone(),
                mistake_agent: self.mistake_agent.clone(),
                mistake_step: step,
            }),
            _ => None,
        };
        (alignment, truth)
    }
}

pub fn parse_who_when(text: &str, fallback_task_id: &str) -> Result<WhoWhenCase> {
    #[derive(Deserialize)]
    struct Message {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        role: Option<String>,
        content: String,
    }
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum StepIndex {
        Number(usize),
        Text(String),
    }
    #[derive(Deserialize)]
    struct Raw {
        #[serde(default, alias = "question_ID")]
        question_id: Option<String>,
        history: Vec<Message>,
        mistake_agent: String,
        mistake_step: StepIndex,
    }

    let raw: Raw = serde_json::from_str(text)?;
    let mistake_record = match raw.mistake_step {
        StepIndex::Number(n) => n,
        StepIndex::Text(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::format("who&when case", format!("mistake_step `{s}` is not an index")))?,
    };
    if mistake_record >= raw.history.len() {
        return Err(Error::Annotation {
            step: mistake_record,
            len: raw.history.len(),
        });
    }
    let task_id = raw.question_id.unwrap_or_else(|| fallback_task_id.to_string());
    let records = raw
        .history
        .iter()
        .map(|m| {
            let who = m.name.as_deref().or(m.role.as_deref()).unwrap_or("unknown");
            format!("{who}: {}", m.content)
        })
        .collect();
    Ok(WhoWhenCase {
        log: RawLog {
            task_id: task_id.clone(),
            run_id: 0,
            records,
            outcome: Outcome::Failure,
        },
        task_id,
        mistake_agent: raw.mistake_agent,
        mistake_record,
    })
}
