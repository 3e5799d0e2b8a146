//! Trajectories, triples and the suite that ties a failing run to its replays.
//!
//! A [`Triple`] is one agent-action-state step after clustering. Its identity
//! is the `cluster_id`: two triples compare equal iff they belong to the same
//! cluster, regardless of how their labels are spelled.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trim and case-fold an agent label.
pub fn normalize_agent_name(raw: &str) -> String {
    raw.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId {
    /// Normalized label.
    pub name: String,
    /// Column of this agent in agent-level matrices.
    pub index: usize,
}

impl AgentId {
    pub fn new(raw_name: &str, index: usize) -> Result<Self> {
        let name = normalize_agent_name(raw_name);
        if name.is_empty() {
            return Err(Error::InvalidLabel(format!(
                "agent name `{raw_name}` is empty after normalization"
            )));
        }
        Ok(Self { name, index })
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone)]
pub struct Triple {
    pub agent: AgentId,
    pub action: String,
    pub state: String,
    pub cluster_id: usize,
}

impl Triple {
    pub fn new(
        agent: AgentId,
        action: impl Into<String>,
        state: impl Into<String>,
        cluster_id: usize,
    ) -> Result<Self> {
        let action = action.into();
        let state = state.into();
        if action.trim().is_empty() || state.trim().is_empty() {
            return Err(Error::InvalidLabel(format!(
                "triple {cluster_id} needs non-empty action and state"
            )));
        }
        Ok(Self {
            agent,
            action,
            state,
            cluster_id,
        })
    }

    /// `agent|action|state`, used as a stable human-readable key.
    pub fn label(&self) -> String {
        format!("{}|{}|{}", self.agent.name, self.action, self.state)
    }

    fn same_labels(&self, other: &Triple) -> bool {
        self.agent == other.agent && self.action == other.action && self.state == other.state
    }
}

impl PartialEq for Triple {
    fn eq(&self, other: &Self) -> bool {
        self.cluster_id == other.cluster_id
    }
}

impl Eq for Triple {}

impl Hash for Triple {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.cluster_id.hash(state);
    }
}

impl PartialOrd for Triple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Triple {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cluster_id.cmp(&other.cluster_id)
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "<{}, {}, {}>#{}",
            self.agent.name, self.action, self.state, self.cluster_id
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    /// Outcome-vector entry: success is 1, failure is 0.
    pub fn encode(self) -> u8 {
        match self {
            Outcome::Success => 1,
            Outcome::Failure => 0,
        }
    }

    pub fn decode(value: u8) -> Result<Self> {
        match value {
            1 => Ok(Outcome::Success),
            0 => Ok(Outcome::Failure),
            other => Err(Error::InvalidParameter(format!(
                "outcome entries are 0 or 1, got {other}"
            ))),
        }
    }

    pub fn is_failure(self) -> bool {
        self == Outcome::Failure
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// 1-based position inside the trajectory.
    pub index: usize,
    pub triple: Triple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// 0 is reserved for the failing trajectory under attribution.
    pub id: usize,
    pub initial_state: String,
    pub steps: Vec<Step>,
    pub outcome: Outcome,
}

impl Trajectory {
    /// Builds a trajectory numbering `triples` 1..=T.
    pub fn from_triples(
        id: usize,
        initial_state: impl Into<String>,
        triples: impl IntoIterator<Item = Triple>,
        outcome: Outcome,
    ) -> Self {
        let steps = triples
            .into_iter()
            .enumerate()
            .map(|(i, triple)| Step {
                index: i + 1,
                triple,
            })
            .collect();
        Self {
            id,
            initial_state: initial_state.into(),
            steps,
            outcome,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of steps whose triple has the given cluster id.
    pub fn frequency(&self, cluster_id: usize) -> usize {
        self.steps
            .iter()
            .filter(|s| s.triple.cluster_id == cluster_id)
            .count()
    }
}

/// Union of all triples, deduplicated by cluster id and ordered ascending.
///
/// Fails when one cluster id is used with two different label sets, since
/// such a suite could not have come out of a single clustering pass.
pub fn build_universe(trajectories: &[Trajectory]) -> Result<Vec<Triple>> {
    let mut seen: BTreeMap<usize, &Triple> = BTreeMap::new();
    for step in trajectories.iter().flat_map(|t| t.steps.iter()) {
        let triple = &step.triple;
        match seen.get(&triple.cluster_id) {
            Some(prev) if !prev.same_labels(triple) => {
                return Err(Error::ConflictingCluster {
                    cluster_id: triple.cluster_id,
                    first: prev.label(),
                    second: triple.label(),
                });
            }
            Some(_) => {}
            None => {
                seen.insert(triple.cluster_id, triple);
            }
        }
    }
    Ok(seen.into_values().cloned().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySuite {
    pub task_id: String,
    /// Index 0 is the failing trajectory, followed by the replays.
    pub trajectories: Vec<Trajectory>,
    pub universe: Vec<Triple>,
    pub agents: Vec<AgentId>,
}

impl TrajectorySuite {
    /// Assembles a suite, deriving its universe and agent set.
    ///
    /// Trajectories without steps are rejected here; the remaining
    /// invariants are reported by [`validate_suite`].
    pub fn new(task_id: impl Into<String>, trajectories: Vec<Trajectory>) -> Result<Self> {
        if let Some(t) = trajectories.iter().find(|t| t.is_empty()) {
            return Err(Error::EmptyTrajectory { id: t.id });
        }
        let universe = build_universe(&trajectories)?;
        let mut agents: Vec<AgentId> = universe.iter().map(|t| t.agent.clone()).collect();
        agents.sort_by(|a, b| a.index.cmp(&b.index).then_with(|| a.name.cmp(&b.name)));
        agents.dedup();
        Ok(Self {
            task_id: task_id.into(),
            trajectories,
            universe,
            agents,
        })
    }

    pub fn root(&self) -> Option<&Trajectory> {
        self.trajectories.first()
    }

    /// Number of replays, i.e. trajectories besides the root.
    pub fn replay_count(&self) -> usize {
        self.trajectories.len().saturating_sub(1)
    }

    /// The root plus the first `k` replays.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        let keep = (k + 1).min(self.trajectories.len());
        Self::new(self.task_id.clone(), self.trajectories[..keep].to_vec())
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// One broken invariant, located as precisely as possible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub trajectory: Option<usize>,
    pub step: Option<usize>,
    pub message: String,
}

impl Violation {
    fn new(trajectory: Option<usize>, step: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            trajectory,
            step,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.trajectory, self.step) {
            (Some(t), Some(s)) => write!(f, "trajectory {t} step {s}: {}", self.message),
            (Some(t), None) => write!(f, "trajectory {t}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

pub fn validate_suite(suite: &TrajectorySuite) -> Vec<Violation> {
    let mut out = Vec::new();

    match suite.trajectories.first() {
        None => out.push(Violation::new(None, None, "suite has no trajectories")),
        Some(root) => {
            if root.outcome != Outcome::Failure {
                out.push(Violation::new(
                    Some(root.id),
                    None,
                    "root trajectory not failing",
                ));
            }
            if root.id != 0 {
                out.push(Violation::new(
                    Some(root.id),
                    None,
                    "root trajectory must have id 0",
                ));
            }
        }
    }

    let mut ids = std::collections::BTreeSet::new();
    for t in &suite.trajectories {
        if !ids.insert(t.id) {
            out.push(Violation::new(Some(t.id), None, "duplicate trajectory id"));
        }
        if t.steps.is_empty() {
            out.push(Violation::new(Some(t.id), None, "trajectory has no steps"));
        }
        for (pos, step) in t.steps.iter().enumerate() {
            if step.index != pos + 1 {
                out.push(Violation::new(
                    Some(t.id),
                    Some(step.index),
                    format!("step index {} found at position {}", step.index, pos + 1),
                ));
            }
            let triple = &step.triple;
            if triple.action.trim().is_empty() || triple.state.trim().is_empty() {
                out.push(Violation::new(
                    Some(t.id),
                    Some(step.index),
                    "triple has an empty action or state label",
                ));
            }
            match suite.universe.iter().find(|u| u.cluster_id == triple.cluster_id) {
                None => out.push(Violation::new(
                    Some(t.id),
                    Some(step.index),
                    format!("universe omits triple {triple}"),
                )),
                Some(u) if !u.same_labels(triple) => out.push(Violation::new(
                    Some(t.id),
                    Some(step.index),
                    format!("triple {triple} disagrees with universe entry {u}"),
                )),
                Some(_) => {}
            }
            if !suite.agents.contains(&triple.agent) {
                out.push(Violation::new(
                    Some(t.id),
                    Some(step.index),
                    format!("agent `{}` is not registered in the suite", triple.agent),
                ));
            }
        }
    }

    for u in &suite.universe {
        let present = suite
            .trajectories
            .iter()
            .any(|t| t.steps.iter().any(|s| s.triple.cluster_id == u.cluster_id));
        if !present {
            out.push(Violation::new(
                None,
                None,
                format!("universe lists {u} which no trajectory contains"),
            ));
        }
    }

    let mut by_name: BTreeMap<&str, usize> = BTreeMap::new();
    let mut by_index: BTreeMap<usize, &str> = BTreeMap::new();
    for a in &suite.agents {
        if a.name.is_empty() {
            out.push(Violation::new(None, None, "agent with empty name"));
        }
        if let Some(prev) = by_name.insert(&a.name, a.index) {
            if prev != a.index {
                out.push(Violation::new(
                    None,
                    None,
                    format!("agent `{}` registered with indices {prev} and {}", a.name, a.index),
                ));
            }
        }
        if let Some(prev) = by_index.insert(a.index, &a.name) {
            if prev != a.name {
                out.push(Violation::new(
                    None,
                    None,
                    format!("agent index {} shared by `{prev}` and `{}`", a.index, a.name),
                ));
            }
        }
    }

    out
}
