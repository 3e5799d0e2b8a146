//! Refined-trajectory JSON documents, one per suite.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize_agent_name, AgentId, Outcome, Step, Trajectory, TrajectorySuite, Triple};

pub const SUITE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteDocument {
    pub version: u32,
    pub task_id: String,
    pub trajectories: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: usize,
    pub initial_state: String,
    pub outcome: Outcome,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub agent: String,
    pub action: String,
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
}

impl SuiteDocument {
    pub fn from_suite(suite: &TrajectorySuite) -> Self {
        Self {
            version: SUITE_FORMAT_VERSION,
            task_id: suite.task_id.clone(),
            trajectories: suite
                .trajectories
                .iter()
                .map(|t| TrajectoryRecord {
                    id: t.id,
                    initial_state: t.initial_state.clone(),
                    outcome: t.outcome,
                    steps: t
                        .steps
                        .iter()
                        .map(|s| StepRecord {
                            index: s.index,
                            agent: s.triple.agent.name.clone(),
                            action: s.triple.action.clone(),
                            state: s.triple.state.clone(),
                            cluster_id: Some(s.triple.cluster_id),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Converts to a suite. Trajectories are ordered by id and agent indices
    /// follow first appearance in that order.
    pub fn into_suite(self) -> Result<TrajectorySuite> {
        if self.version != SUITE_FORMAT_VERSION {
            return Err(Error::format(
                "suite document",
                format!("unsupported version {}", self.version),
            ));
        }
        let mut records = self.trajectories;
        records.sort_by_key(|t| t.id);

        let mut agents: BTreeMap<String, AgentId> = BTreeMap::new();
        let mut trajectories = Vec::with_capacity(records.len());
        for record in records {
            let mut steps = Vec::with_capacity(record.steps.len());
            for step in record.steps {
                let cluster_id = step.cluster_id.ok_or_else(|| {
                    Error::format(
                        "suite document",
                        format!(
                            "trajectory {} step {} lacks a cluster_id",
                            record.id, step.index
                        ),
                    )
                })?;
                let key = normalize_agent_name(&step.agent);
                let next = agents.len();
                let agent = match agents.get(&key) {
                    Some(a) => a.clone(),
                    None => {
                        let a = AgentId::new(&step.agent, next)?;
                        agents.insert(key, a.clone());
                        a
                    }
                };
                steps.push(Step {
                    index: step.index,
                    triple: Triple::new(agent, step.action, step.state, cluster_id)?,
                });
            }
            trajectories.push(Trajectory {
                id: record.id,
                initial_state: record.initial_state,
                steps,
                outcome: record.outcome,
            });
        }
        TrajectorySuite::new(self.task_id, trajectories)
    }
}

pub fn parse_suite(text: &str) -> Result<TrajectorySuite> {
    let doc: SuiteDocument = serde_json::from_str(text)?;
    doc.into_suite()
}

/// Pretty-printed JSON with a trailing newline.
pub fn suite_to_json(suite: &TrajectorySuite) -> String {
    let mut s = serde_json::to_string_pretty(&SuiteDocument::from_suite(suite))
        .expect("suite documents always serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::worked_suite;

    #[test]
    fn worked_suite_survives_a_round_trip() {
        let suite = worked_suite();
        let text = suite_to_json(&suite);
        assert_eq!(parse_suite(&text).unwrap(), suite);
    }

    #[test]
    fn missing_cluster_id_is_an_error() {
        let text = r#"{"version":1,"task_id":"t","trajectories":[{"id":0,"initial_state":"q",
            "outcome":"failure","steps":[{"index":1,"agent":"a","action":"x","state":"y"}]}]}"#;
        let err = parse_suite(text).unwrap_err();
        assert!(err.to_string().contains("cluster_id"), "{err}");
    }

    #[test]
    fn outcome_strings_are_lowercase() {
        let text = r#"{"version":1,"task_id":"t","trajectories":[{"id":0,"initial_state":"q",
            "outcome":"FAILURE","steps":[]}]}"#;
        assert!(parse_suite(text).is_err());
    }

    #[test]
    fn agents_are_unified_by_normalized_name() {
        let text = r#"{"version":1,"task_id":"t","trajectories":[
            {"id":1,"initial_state":"q","outcome":"success","steps":[{"index":1,"agent":"Coder ","action":"x","state":"y","cluster_id":1}]},
            {"id":0,"initial_state":"q","outcome":"failure","steps":[{"index":1,"agent":"coder","action":"x","state":"z","cluster_id":0}]}]}"#;
        let suite = parse_suite(text).unwrap();
        assert_eq!(suite.agents.len(), 1);
        assert_eq!(suite.trajectories[0].id, 0);
    }
}
