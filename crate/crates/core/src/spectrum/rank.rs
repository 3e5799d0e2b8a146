use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::formulas::ClassicFormula;
use super::metrics::{components, local_enhancement, Lambda, ScoreBreakdown};
use super::{build_matrices, scores_equal, SpectrumMatrices};
use crate::error::{Error, Result};
use crate::model::TrajectorySuite;

/// How candidates are scored.
///
/// The `famas-o*` modes each omit one factor of the composite:
/// `famas-obeta` drops `(1 + beta)`, `famas-ogamma` drops `(1 + gamma)` and
/// `famas-olambda` fixes `alpha = 1` while keeping the decayed Kulczynski2.
/// `famas-k` is plain Kulczynski2 on undecayed counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    Famas,
    FamasK,
    FamasObeta,
    FamasOgamma,
    FamasOlambda,
    Ochiai,
    Tarantula,
    Jaccard,
    Dstar2,
    Kulczynski2,
}

impl ScoringMode {
    pub const ALL: [ScoringMode; 10] = [
        ScoringMode::Famas,
        ScoringMode::FamasK,
        ScoringMode::FamasObeta,
        ScoringMode::FamasOgamma,
        ScoringMode::FamasOlambda,
        ScoringMode::Ochiai,
        ScoringMode::Tarantula,
        ScoringMode::Jaccard,
        ScoringMode::Dstar2,
        ScoringMode::Kulczynski2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoringMode::Famas => "famas",
            ScoringMode::FamasK => "famas-k",
            ScoringMode::FamasObeta => "famas-obeta",
            ScoringMode::FamasOgamma => "famas-ogamma",
            ScoringMode::FamasOlambda => "famas-olambda",
            ScoringMode::Ochiai => "ochiai",
            ScoringMode::Tarantula => "tarantula",
            ScoringMode::Jaccard => "jaccard",
            ScoringMode::Dstar2 => "dstar2",
            ScoringMode::Kulczynski2 => "kulczynski2",
        }
    }

    fn classic(self) -> Option<ClassicFormula> {
        match self {
            ScoringMode::Ochiai => Some(ClassicFormula::Ochiai),
            ScoringMode::Tarantula => Some(ClassicFormula::Tarantula),
            ScoringMode::Jaccard => Some(ClassicFormula::Jaccard),
            ScoringMode::Dstar2 => Some(ClassicFormula::Dstar2),
            ScoringMode::Kulczynski2 | ScoringMode::FamasK => Some(ClassicFormula::Kulczynski2),
            _ => None,
        }
    }

    /// Whether the mode multiplies by the local enhancement factor.
    pub fn uses_alpha(self) -> bool {
        matches!(
            self,
            ScoringMode::Famas | ScoringMode::FamasObeta | ScoringMode::FamasOgamma
        )
    }

    pub fn check_lambda(self, lambda: Lambda) -> Result<()> {
        if self.uses_alpha() && lambda.is_one() {
            return Err(Error::InvalidParameter(format!(
                "mode {self} needs lambda < 1; use famas-olambda to score at lambda = 1"
            )));
        }
        Ok(())
    }

    fn score(self, b: &ScoreBreakdown) -> f64 {
        if let Some(f) = self.classic() {
            return b.classic_scores[&f];
        }
        let beta = 1.0 + b.beta;
        let gamma = 1.0 + b.gamma;
        match self {
            ScoringMode::Famas => b.alpha * b.kulczynski2_lambda * beta * gamma,
            ScoringMode::FamasObeta => b.alpha * b.kulczynski2_lambda * gamma,
            ScoringMode::FamasOgamma => b.alpha * b.kulczynski2_lambda * beta,
            ScoringMode::FamasOlambda => b.kulczynski2_lambda * beta * gamma,
            _ => unreachable!("classic modes handled above"),
        }
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        ScoringMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scoring mode `{s}`")))
    }
}

/// Candidates of the failing trajectory in descending score order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub mode: ScoringMode,
    pub lambda: Lambda,
    pub entries: Vec<ScoreBreakdown>,
    /// Runs of consecutive entries with equal scores, as index ranges into
    /// `entries`. Singletons are included so every entry belongs to a group.
    pub tie_groups: Vec<std::ops::Range<usize>>,
    /// Step count of the failing trajectory.
    pub root_steps: usize,
}

impl Ranking {
    pub fn top1(&self) -> Option<&ScoreBreakdown> {
        self.entries.first()
    }

    /// True when exactly one entry holds the highest score.
    pub fn top1_unique(&self) -> bool {
        self.tie_groups.first().is_some_and(|g| g.len() == 1)
    }

    /// Competition rank (1-based) of the entry at `position`.
    pub fn rank_of(&self, position: usize) -> usize {
        self.tie_groups
            .iter()
            .find(|g| g.contains(&position))
            .map_or(position + 1, |g| g.start + 1)
    }

    pub fn export(&self) -> RankingExport {
        RankingExport {
            mode: self.mode,
            lambda: self.lambda.value(),
            entries: self
                .entries
                .iter()
                .enumerate()
                .map(|(pos, b)| ExportEntry {
                    rank: self.rank_of(pos),
                    cluster_id: b.triple.cluster_id,
                    agent: b.triple.agent.name.clone(),
                    action: b.triple.action.clone(),
                    state: b.triple.state.clone(),
                    alpha: b.alpha,
                    k2_lambda: b.kulczynski2_lambda,
                    beta: b.beta,
                    gamma: b.gamma,
                    composite: b.composite,
                    classic: b
                        .classic_scores
                        .iter()
                        .map(|(f, v)| (f.name().to_string(), *v))
                        .collect(),
                })
                .collect(),
            top1_unique: self.top1_unique(),
        }
    }

    /// `rank<TAB>composite` per entry, with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rank\tcomposite\n");
        for (pos, b) in self.entries.iter().enumerate() {
            out.push_str(&format!("{}\t{}\n", self.rank_of(pos), b.composite));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingExport {
    pub mode: ScoringMode,
    pub lambda: f64,
    pub entries: Vec<ExportEntry>,
    pub top1_unique: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportEntry {
    pub rank: usize,
    pub cluster_id: usize,
    pub agent: String,
    pub action: String,
    pub state: String,
    pub alpha: f64,
    pub k2_lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub composite: f64,
    pub classic: BTreeMap<String, f64>,
}

pub fn rank_triples(suite: &TrajectorySuite, lambda: Lambda, mode: ScoringMode) -> Result<Ranking> {
    mode.check_lambda(lambda)?;
    let matrices = build_matrices(suite)?;
    rank_matrices(&matrices, lambda, mode)
}

pub fn rank_matrices(matrices: &SpectrumMatrices, lambda: Lambda, mode: ScoringMode) -> Result<Ranking> {
    mode.check_lambda(lambda)?;
    let mut entries = Vec::new();
    for triple in matrices.candidates() {
        let alpha = if lambda.is_one() || !mode.uses_alpha() {
            1.0
        } else {
            local_enhancement(matrices, triple, lambda)?
        };
        let mut b = components(matrices, triple, lambda, alpha)?;
        b.composite = mode.score(&b);
        entries.push(b);
    }
    if entries.is_empty() {
        return Err(Error::EmptyRanking);
    }

    entries.sort_by(|x, y| {
        y.composite
            .total_cmp(&x.composite)
            .then(x.triple.cluster_id.cmp(&y.triple.cluster_id))
    });

    let mut tie_groups = Vec::new();
    let mut start = 0;
    for i in 1..=entries.len() {
        if i == entries.len() || !scores_equal(entries[start].composite, entries[i].composite) {
            entries[start..i].sort_by_key(|b| b.triple.cluster_id);
            tie_groups.push(start..i);
            start = i;
        }
    }

    Ok(Ranking {
        mode,
        lambda,
        entries,
        tie_groups,
        root_steps: matrices
            .freq_triple
            .first()
            .map_or(0, |r| r.iter().map(|&f| f as usize).sum()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{worked_suite, WorkedIds};
    use crate::model::{AgentId, Outcome, Trajectory, Triple};

    #[test]
    fn famas_ranks_worked_suite() {
        let r = rank_triples(&worked_suite(), Lambda::DEFAULT, ScoringMode::Famas).unwrap();
        let ids = WorkedIds::default();
        let order: Vec<usize> = r.entries.iter().map(|b| b.triple.cluster_id).collect();
        assert_eq!(order, vec![ids.eta1, ids.eta3]);
        assert!((r.entries[0].composite - 18.1891).abs() < 1e-3);
        assert!((r.entries[1].composite - 3.0).abs() < 1e-12);
        assert!(r.top1_unique());
        assert_eq!(r.root_steps, 3);
    }

    #[test]
    fn kulczynski2_ranks_worked_suite() {
        let r = rank_triples(&worked_suite(), Lambda::DEFAULT, ScoringMode::Kulczynski2).unwrap();
        let scores: Vec<f64> = r.entries.iter().map(|b| b.composite).collect();
        assert_eq!(scores, vec![1.0, 0.75]);
        assert_eq!(r.top1().unwrap().triple.cluster_id, WorkedIds::default().eta1);
    }

    #[test]
    fn equal_scores_form_a_tie_group() {
        let a = AgentId::new("a", 0).unwrap();
        let x = Triple::new(a.clone(), "x", "1", 0).unwrap();
        let y = Triple::new(a, "y", "2", 1).unwrap();
        let suite = TrajectorySuite::new(
            "tie",
            vec![
                Trajectory::from_triples(0, "q", [x.clone(), y.clone()], Outcome::Failure),
                Trajectory::from_triples(1, "q", [x, y], Outcome::Success),
            ],
        )
        .unwrap();
        let r = rank_triples(&suite, Lambda::DEFAULT, ScoringMode::Famas).unwrap();
        assert_eq!(r.tie_groups, vec![0..2]);
        assert!(!r.top1_unique());
        assert_eq!(r.entries[0].triple.cluster_id, 0);
        assert_eq!(r.export().entries[1].rank, 1);
    }

    #[test]
    fn alpha_modes_reject_lambda_one() {
        let one = Lambda::new(1.0).unwrap();
        for mode in [ScoringMode::Famas, ScoringMode::FamasObeta, ScoringMode::FamasOgamma] {
            assert!(rank_triples(&worked_suite(), one, mode).is_err());
        }
        assert!(rank_triples(&worked_suite(), one, ScoringMode::FamasOlambda).is_ok());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in ScoringMode::ALL {
            assert_eq!(m.name().parse::<ScoringMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
    }

    #[test]
    fn tsv_lists_rank_and_score() {
        let r = rank_triples(&worked_suite(), Lambda::DEFAULT, ScoringMode::Kulczynski2).unwrap();
        assert_eq!(r.to_tsv(), "rank\tcomposite\n1\t1\n2\t0.75\n");
    }
}
