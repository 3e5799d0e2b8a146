//! Spectrum matrices and suspiciousness scoring.

mod formulas;
mod metrics;
mod rank;

use std::collections::BTreeMap;

pub use formulas::{classic_suspiciousness, BaseCounts, ClassicFormula};
pub use metrics::{
    composite_score, coverage_ratio, decayed_counts, frequency_proportion, kulczynski2_lambda,
    local_enhancement, DecayedCounts, Lambda, ScoreBreakdown,
};
pub use rank::{rank_matrices, rank_triples, ExportEntry, Ranking, RankingExport, ScoringMode};

use crate::error::{Error, Result};
use crate::model::{validate_suite, AgentId, Triple, TrajectorySuite};

/// Relative tolerance used for score equality.
pub const SCORE_RTOL: f64 = 1e-12;

pub fn scores_equal(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= SCORE_RTOL * a.abs().max(b.abs())
}

/// Coverage and frequency of every triple and agent in every trajectory.
///
/// Rows follow trajectory order (row 0 is the failing root). Triple columns
/// follow ascending cluster id, agent columns ascending agent index.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumMatrices {
    pub coverage_triple: Vec<Vec<u8>>,
    pub freq_triple: Vec<Vec<u32>>,
    pub coverage_agent: Vec<Vec<u8>>,
    pub freq_agent: Vec<Vec<u32>>,
    /// 1 for success, 0 for failure.
    pub outcomes: Vec<u8>,
    pub triples: Vec<Triple>,
    pub agents: Vec<AgentId>,
    triple_index: BTreeMap<usize, usize>,
    agent_index: BTreeMap<usize, usize>,
    triple_agent: Vec<usize>,
}

impl SpectrumMatrices {
    pub fn rows(&self) -> usize {
        self.outcomes.len()
    }

    pub fn triple_column(&self, triple: &Triple) -> Result<usize> {
        self.column_of(triple.cluster_id)
    }

    pub fn column_of(&self, cluster_id: usize) -> Result<usize> {
        self.triple_index
            .get(&cluster_id)
            .copied()
            .ok_or(Error::UnknownTriple { cluster_id })
    }

    pub fn agent_column(&self, agent: &AgentId) -> Option<usize> {
        self.agent_index.get(&agent.index).copied()
    }

    /// Agent column owning the given triple column.
    pub fn agent_of_column(&self, column: usize) -> usize {
        self.triple_agent[column]
    }

    pub fn base_counts(&self, triple: &Triple) -> Result<BaseCounts> {
        let col = self.triple_column(triple)?;
        let mut counts = BaseCounts::default();
        for (row, &o) in self.outcomes.iter().enumerate() {
            let covered = self.coverage_triple[row][col] == 1;
            match (o, covered) {
                (0, true) => counts.n_cf += 1,
                (0, false) => counts.n_uf += 1,
                (_, true) => counts.n_cs += 1,
                (_, false) => counts.n_us += 1,
            }
        }
        Ok(counts)
    }

    /// Triples that occur at least once in the root trajectory.
    pub fn candidates(&self) -> impl Iterator<Item = &Triple> + '_ {
        self.triples
            .iter()
            .enumerate()
            .filter(|(col, _)| self.freq_triple.first().is_some_and(|r| r[*col] >= 1))
            .map(|(_, t)| t)
    }
}

pub fn build_matrices(suite: &TrajectorySuite) -> Result<SpectrumMatrices> {
    let violations = validate_suite(suite);
    if !violations.is_empty() {
        return Err(Error::InvalidSuite(violations));
    }

    let triples = suite.universe.clone();
    let agents = suite.agents.clone();
    let triple_index: BTreeMap<usize, usize> = triples
        .iter()
        .enumerate()
        .map(|(col, t)| (t.cluster_id, col))
        .collect();
    let agent_index: BTreeMap<usize, usize> = agents
        .iter()
        .enumerate()
        .map(|(col, a)| (a.index, col))
        .collect();
    let triple_agent: Vec<usize> = triples.iter().map(|t| agent_index[&t.agent.index]).collect();

    let rows = suite.trajectories.len();
    let mut freq_triple = vec![vec![0u32; triples.len()]; rows];
    let mut freq_agent = vec![vec![0u32; agents.len()]; rows];
    for (row, trajectory) in suite.trajectories.iter().enumerate() {
        for step in &trajectory.steps {
            let col = triple_index[&step.triple.cluster_id];
            freq_triple[row][col] += 1;
            freq_agent[row][triple_agent[col]] += 1;
        }
    }
    let to_cov = |m: &Vec<Vec<u32>>| -> Vec<Vec<u8>> {
        m.iter()
            .map(|r| r.iter().map(|&f| u8::from(f >= 1)).collect())
            .collect()
    };

    Ok(SpectrumMatrices {
        coverage_triple: to_cov(&freq_triple),
        coverage_agent: to_cov(&freq_agent),
        freq_triple,
        freq_agent,
        outcomes: suite
            .trajectories
            .iter()
            .map(|t| t.outcome.encode())
            .collect(),
        triples,
        agents,
        triple_index,
        agent_index,
        triple_agent,
    })
}

pub fn base_counts(matrices: &SpectrumMatrices, triple: &Triple) -> Result<BaseCounts> {
    matrices.base_counts(triple)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{worked_suite, WorkedIds};
    use crate::model::{AgentId, Outcome, Trajectory};

    #[test]
    fn worked_suite_frequency_rows() {
        let suite = worked_suite();
        let m = build_matrices(&suite).unwrap();
        let ids = WorkedIds::default();
        let c1 = m.column_of(ids.eta1).unwrap();
        let c2 = m.column_of(ids.eta2).unwrap();
        let c3 = m.column_of(ids.eta3).unwrap();
        assert_eq!((m.freq_triple[0][c1], m.freq_triple[0][c2], m.freq_triple[0][c3]), (2, 0, 1));
        assert_eq!(m.outcomes, vec![0, 0, 1, 1]);
        let col = |name: &str| m.agents.iter().position(|a| a.name == name).unwrap();
        assert_eq!((m.freq_agent[0][col("a1")], m.freq_agent[0][col("a2")]), (2, 1));
    }

    #[test]
    fn worked_suite_base_counts() {
        let suite = worked_suite();
        let m = build_matrices(&suite).unwrap();
        let ids = WorkedIds::default();
        let eta1 = &m.triples[m.column_of(ids.eta1).unwrap()].clone();
        let eta3 = &m.triples[m.column_of(ids.eta3).unwrap()].clone();
        assert_eq!(m.base_counts(eta1).unwrap(), BaseCounts::new(2, 0, 0, 2));
        assert_eq!(m.base_counts(eta3).unwrap(), BaseCounts::new(2, 0, 2, 0));
        let eta2 = &m.triples[m.column_of(ids.eta2).unwrap()].clone();
        assert_eq!(m.base_counts(eta2).unwrap().n_cf, 0);
    }

    #[test]
    fn minimal_suite_is_one_by_one() {
        let a = AgentId::new("solo", 0).unwrap();
        let t = Triple::new(a, "act", "done", 0).unwrap();
        let suite = TrajectorySuite::new(
            "min",
            vec![Trajectory::from_triples(0, "q", [t], Outcome::Failure)],
        )
        .unwrap();
        let m = build_matrices(&suite).unwrap();
        assert_eq!(m.freq_triple, vec![vec![1]]);
        assert_eq!(m.coverage_triple, vec![vec![1]]);
        assert_eq!(m.freq_agent, vec![vec![1]]);
        assert_eq!(m.coverage_agent, vec![vec![1]]);
        assert_eq!(m.outcomes, vec![0]);
    }

    #[test]
    fn unknown_triple_is_a_lookup_error() {
        let m = build_matrices(&worked_suite()).unwrap();
        let stray = Triple::new(AgentId::new("a1", 0).unwrap(), "x", "y", 99).unwrap();
        assert!(matches!(
            m.base_counts(&stray),
            Err(Error::UnknownTriple { cluster_id: 99 })
        ));
    }

    #[test]
    fn invalid_suite_is_refused() {
        let mut suite = worked_suite();
        suite.trajectories[0].outcome = Outcome::Success;
        assert!(matches!(build_matrices(&suite), Err(Error::InvalidSuite(_))));
    }

    #[test]
    fn score_equality_is_relative() {
        assert!(scores_equal(3.0, 3.0 + 1e-13));
        assert!(!scores_equal(3.0, 3.0 + 1e-9));
        assert!(scores_equal(0.0, 0.0));
    }
}
