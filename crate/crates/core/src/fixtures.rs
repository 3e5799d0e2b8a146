//! Small hand-built suites shared by tests and examples.

use crate::model::{AgentId, Outcome, Trajectory, TrajectorySuite, Triple};

/// Cluster ids of the three triples in [`worked_suite`].
#[derive(Debug, Clone, Copy)]
pub struct WorkedIds {
    /// `<a1, search, badResult>`
    pub eta1: usize,
    /// `<a1, search, goodResult>`
    pub eta2: usize,
    /// `<a2, plan, planMade>`
    pub eta3: usize,
}

impl Default for WorkedIds {
    fn default() -> Self {
        Self {
            eta1: 1,
            eta2: 2,
            eta3: 0,
        }
    }
}

/// Two failing and two succeeding runs of a search task.
///
/// Agent indices and cluster ids are the ones an exact-match clustering pass
/// assigns: `a2` acts first, so it gets index 0 and its only triple id 0.
///
/// ```text
/// t0 failure: [eta3, eta1, eta1]
/// t1 failure: [eta3, eta1]
/// t2 success: [eta3, eta2]
/// t3 success: [eta3, eta2]
/// ```
pub fn worked_suite() -> TrajectorySuite {
    let ids = WorkedIds::default();
    let a1 = AgentId::new("A1", 1).expect("static label");
    let a2 = AgentId::new("A2", 0).expect("static label");
    let eta1 = Triple::new(a1.clone(), "search", "badResult", ids.eta1).expect("static label");
    let eta2 = Triple::new(a1, "search", "goodResult", ids.eta2).expect("static label");
    let eta3 = Triple::new(a2, "plan", "planMade", ids.eta3).expect("static label");
    let q = "find the answer";
    let trajectories = vec![
        Trajectory::from_triples(0, q, [eta3.clone(), eta1.clone(), eta1.clone()], Outcome::Failure),
        Trajectory::from_triples(1, q, [eta3.clone(), eta1], Outcome::Failure),
        Trajectory::from_triples(2, q, [eta3.clone(), eta2.clone()], Outcome::Success),
        Trajectory::from_triples(3, q, [eta3, eta2], Outcome::Success),
    ];
    TrajectorySuite::new("worked-search", trajectories).expect("fixture is well formed")
}
