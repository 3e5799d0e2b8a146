//! Agent-behavior metrics (coverage ratio, frequency proportion) and
//! action-behavior metrics (decayed counts, local enhancement), plus the
//! composite score built from them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::formulas::{kulczynski2, ClassicFormula};
use super::SpectrumMatrices;
use crate::error::{Error, Result};
use crate::model::Triple;

/// Decay factor applied to repeated occurrences, in (0.5, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Lambda(f64);

impl Lambda {
    pub const DEFAULT: Lambda = Lambda(0.9);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.5 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidParameter(format!(
                "lambda must lie in (0.5, 1], got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_one(self) -> bool {
        self.0 == 1.0
    }
}

impl Default for Lambda {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<f64> for Lambda {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Lambda::new(value)
    }
}

impl From<Lambda> for f64 {
    fn from(l: Lambda) -> f64 {
        l.0
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayedCounts {
    pub n_cf: f64,
    pub n_cs: f64,
}

/// Sums `lambda^(f - 1)` over covering rows, split by outcome.
pub fn decayed_counts(
    matrices: &SpectrumMatrices,
    triple: &Triple,
    lambda: Lambda,
) -> Result<DecayedCounts> {
    let col = matrices.triple_column(triple)?;
    let mut out = DecayedCounts { n_cf: 0.0, n_cs: 0.0 };
    for (row, &o) in matrices.outcomes.iter().enumerate() {
        let f = matrices.freq_triple[row][col];
        if f == 0 {
            continue;
        }
        let w = decay_weight(lambda, f);
        if o == 0 {
            out.n_cf += w;
        } else {
            out.n_cs += w;
        }
    }
    Ok(out)
}

fn decay_weight(lambda: Lambda, f: u32) -> f64 {
    if lambda.is_one() {
        1.0
    } else {
        lambda.value().powi(f as i32 - 1)
    }
}

/// Kulczynski2 with decayed covered counts and the plain `n_uf`.
pub fn kulczynski2_lambda(
    matrices: &SpectrumMatrices,
    triple: &Triple,
    lambda: Lambda,
) -> Result<f64> {
    let d = decayed_counts(matrices, triple, lambda)?;
    let n_uf = matrices.base_counts(triple)?.n_uf;
    Ok(kulczynski2(d.n_cf, f64::from(n_uf), d.n_cs))
}

/// `1 + log_{1/lambda}(f)` where `f` is the frequency in the root trajectory.
pub fn local_enhancement(matrices: &SpectrumMatrices, triple: &Triple, lambda: Lambda) -> Result<f64> {
    let col = matrices.triple_column(triple)?;
    let f = matrices.freq_triple.first().map_or(0, |r| r[col]);
    if f == 0 {
        return Err(Error::NotCandidate {
            cluster_id: triple.cluster_id,
        });
    }
    if lambda.is_one() {
        return Err(Error::InvalidParameter(
            "local enhancement is undefined at lambda = 1; use mode famas-olambda".into(),
        ));
    }
    Ok(1.0 + f64::from(f).ln() / (1.0 / lambda.value()).ln())
}

/// Share of the agent's active trajectories that contain the triple.
pub fn coverage_ratio(matrices: &SpectrumMatrices, triple: &Triple) -> Result<f64> {
    let col = matrices.triple_column(triple)?;
    let agent_col = matrices.agent_of_column(col);
    let nc_triple: u32 = matrices.coverage_triple.iter().map(|r| u32::from(r[col])).sum();
    let nc_agent: u32 = matrices
        .coverage_agent
        .iter()
        .map(|r| u32::from(r[agent_col]))
        .sum();
    if nc_agent == 0 {
        return Err(Error::InactiveAgent {
            agent: triple.agent.name.clone(),
        });
    }
    Ok(f64::from(nc_triple) / f64::from(nc_agent))
}

/// Share of the agent's total step count taken by the triple.
pub fn frequency_proportion(matrices: &SpectrumMatrices, triple: &Triple) -> Result<f64> {
    let col = matrices.triple_column(triple)?;
    let agent_col = matrices.agent_of_column(col);
    let f_triple: u64 = matrices.freq_triple.iter().map(|r| u64::from(r[col])).sum();
    let f_agent: u64 = matrices.freq_agent.iter().map(|r| u64::from(r[agent_col])).sum();
    if f_agent == 0 {
        return Err(Error::InactiveAgent {
            agent: triple.agent.name.clone(),
        });
    }
    Ok(f_triple as f64 / f_agent as f64)
}

/// Every metric computed for one candidate triple.
///
/// `composite` is the value the ranking mode sorts by. In mode `famas` it is
/// `alpha * kulczynski2_lambda * (1 + beta) * (1 + gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    pub triple: Triple,
    /// Local enhancement; 1 where the mode disables it or lambda is 1.
    pub alpha: f64,
    pub kulczynski2_lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub classic_scores: BTreeMap<ClassicFormula, f64>,
    pub composite: f64,
}

pub fn composite_score(
    matrices: &SpectrumMatrices,
    triple: &Triple,
    lambda: Lambda,
) -> Result<ScoreBreakdown> {
    let alpha = local_enhancement(matrices, triple, lambda)?;
    let mut b = components(matrices, triple, lambda, alpha)?;
    b.composite = b.alpha * b.kulczynski2_lambda * (1.0 + b.beta) * (1.0 + b.gamma);
    Ok(b)
}

/// All metrics with `composite` left at 0 for the caller to fill.
pub(crate) fn components(
    matrices: &SpectrumMatrices,
    triple: &Triple,
    lambda: Lambda,
    alpha: f64,
) -> Result<ScoreBreakdown> {
    let counts = matrices.base_counts(triple)?;
    let classic_scores = ClassicFormula::ALL
        .into_iter()
        .map(|f| (f, f.evaluate(counts)))
        .collect();
    Ok(ScoreBreakdown {
        triple: triple.clone(),
        alpha,
        kulczynski2_lambda: kulczynski2_lambda(matrices, triple, lambda)?,
        beta: frequency_proportion(matrices, triple)?,
        gamma: coverage_ratio(matrices, triple)?,
        classic_scores,
        composite: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{worked_suite, WorkedIds};
    use crate::spectrum::build_matrices;

    fn setup() -> (SpectrumMatrices, Triple, Triple, Triple) {
        let m = build_matrices(&worked_suite()).unwrap();
        let ids = WorkedIds::default();
        let get = |id| m.triples[m.column_of(id).unwrap()].clone();
        let (e1, e2, e3) = (get(ids.eta1), get(ids.eta2), get(ids.eta3));
        (m, e1, e2, e3)
    }

    const L09: Lambda = Lambda(0.9);

    #[test]
    fn lambda_range() {
        assert!(Lambda::new(0.5).is_err());
        assert!(Lambda::new(0.4).is_err());
        assert!(Lambda::new(1.01).is_err());
        assert!(Lambda::new(f64::NAN).is_err());
        assert!(Lambda::new(1.0).is_ok());
        assert!(Lambda::new(0.51).is_ok());
    }

    #[test]
    fn decayed_counts_on_worked_suite() {
        let (m, e1, _, e3) = setup();
        let d1 = decayed_counts(&m, &e1, L09).unwrap();
        assert!((d1.n_cf - 1.9).abs() < 1e-12);
        assert_eq!(d1.n_cs, 0.0);
        let d3 = decayed_counts(&m, &e3, L09).unwrap();
        assert_eq!((d3.n_cf, d3.n_cs), (2.0, 2.0));
    }

    #[test]
    fn decayed_counts_reduce_at_one() {
        let (m, e1, e2, e3) = setup();
        for t in [e1, e2, e3] {
            let d = decayed_counts(&m, &t, Lambda::new(1.0).unwrap()).unwrap();
            let c = m.base_counts(&t).unwrap();
            assert_eq!(d.n_cf, f64::from(c.n_cf));
            assert_eq!(d.n_cs, f64::from(c.n_cs));
        }
    }

    #[test]
    fn kulczynski2_lambda_on_worked_suite() {
        let (m, e1, e2, e3) = setup();
        assert!((kulczynski2_lambda(&m, &e1, L09).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(kulczynski2_lambda(&m, &e3, L09).unwrap(), 0.75);
        assert_eq!(kulczynski2_lambda(&m, &e2, L09).unwrap(), 0.0);
    }

    #[test]
    fn local_enhancement_values_and_errors() {
        let (m, e1, e2, e3) = setup();
        let a1 = local_enhancement(&m, &e1, L09).unwrap();
        assert!((a1 - 7.578_81).abs() < 1e-4, "{a1}");
        assert_eq!(local_enhancement(&m, &e3, L09).unwrap(), 1.0);
        assert!(matches!(
            local_enhancement(&m, &e2, L09),
            Err(Error::NotCandidate { .. })
        ));
        assert!(matches!(
            local_enhancement(&m, &e1, Lambda::new(1.0).unwrap()),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn agent_metrics_on_worked_suite() {
        let (m, e1, _, e3) = setup();
        assert_eq!(coverage_ratio(&m, &e1).unwrap(), 0.5);
        assert_eq!(coverage_ratio(&m, &e3).unwrap(), 1.0);
        assert_eq!(frequency_proportion(&m, &e1).unwrap(), 0.6);
        assert_eq!(frequency_proportion(&m, &e3).unwrap(), 1.0);
    }

    #[test]
    fn composite_on_worked_suite() {
        let (m, e1, _, e3) = setup();
        let b1 = composite_score(&m, &e1, L09).unwrap();
        assert!((b1.composite - 18.1891).abs() < 1e-3, "{}", b1.composite);
        let product = b1.alpha * b1.kulczynski2_lambda * (1.0 + b1.beta) * (1.0 + b1.gamma);
        assert!((b1.composite - product).abs() <= 1e-12 * product);
        let b3 = composite_score(&m, &e3, L09).unwrap();
        assert!((b3.composite - 3.0).abs() < 1e-12);
        assert_eq!(b3.classic_scores.len(), 5);
    }
}
