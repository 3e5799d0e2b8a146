//! Classic SBFL coefficients over the four spectrum counts.
//!
//! Every fraction with a zero denominator evaluates to 0, so scores stay
//! finite on degenerate suites (no passing runs, triples covered everywhere).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseCounts {
    /// Failing trajectories that contain the triple.
    pub n_cf: u32,
    /// Failing trajectories that do not contain it.
    pub n_uf: u32,
    /// Succeeding trajectories that contain it.
    pub n_cs: u32,
    /// Succeeding trajectories that do not contain it.
    pub n_us: u32,
}

impl BaseCounts {
    pub fn new(n_cf: u32, n_uf: u32, n_cs: u32, n_us: u32) -> Self {
        Self {
            n_cf,
            n_uf,
            n_cs,
            n_us,
        }
    }

    pub fn failing(&self) -> u32 {
        self.n_cf + self.n_uf
    }

    pub fn succeeding(&self) -> u32 {
        self.n_cs + self.n_us
    }
}

/// `num / den`, or 0 when `den` is 0.
pub(crate) fn guarded(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassicFormula {
    Ochiai,
    Tarantula,
    Jaccard,
    Dstar2,
    Kulczynski2,
}

impl ClassicFormula {
    pub const ALL: [ClassicFormula; 5] = [
        ClassicFormula::Ochiai,
        ClassicFormula::Tarantula,
        ClassicFormula::Jaccard,
        ClassicFormula::Dstar2,
        ClassicFormula::Kulczynski2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassicFormula::Ochiai => "ochiai",
            ClassicFormula::Tarantula => "tarantula",
            ClassicFormula::Jaccard => "jaccard",
            ClassicFormula::Dstar2 => "dstar2",
            ClassicFormula::Kulczynski2 => "kulczynski2",
        }
    }

    pub fn evaluate(self, counts: BaseCounts) -> f64 {
        let cf = f64::from(counts.n_cf);
        let uf = f64::from(counts.n_uf);
        let cs = f64::from(counts.n_cs);
        let us = f64::from(counts.n_us);
        match self {
            ClassicFormula::Ochiai => guarded(cf, ((cf + uf) * (cf + cs)).sqrt()),
            ClassicFormula::Tarantula => {
                let fail = guarded(cf, cf + uf);
                let pass = guarded(cs, cs + us);
                guarded(fail, fail + pass)
            }
            ClassicFormula::Jaccard => guarded(cf, cf + uf + cs),
            ClassicFormula::Dstar2 => guarded(cf * cf, cs + uf),
            ClassicFormula::Kulczynski2 => kulczynski2(cf, uf, cs),
        }
    }
}

/// Kulczynski2 on real-valued counts; shared with the decayed variant.
pub(crate) fn kulczynski2(cf: f64, uf: f64, cs: f64) -> f64 {
    0.5 * (guarded(cf, cf + uf) + guarded(cf, cf + cs))
}

impl fmt::Display for ClassicFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassicFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassicFormula::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown formula `{s}`")))
    }
}

pub fn classic_suspiciousness(formula: ClassicFormula, counts: BaseCounts) -> f64 {
    formula.evaluate(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kulczynski2_on_perfect_fault() {
        let v = classic_suspiciousness(ClassicFormula::Kulczynski2, BaseCounts::new(2, 0, 0, 2));
        assert_eq!(v, 1.0);
    }

    #[test]
    fn ochiai_on_ubiquitous_triple() {
        let v = classic_suspiciousness(ClassicFormula::Ochiai, BaseCounts::new(2, 0, 2, 0));
        // 2 / sqrt(2 * 4)
        assert!((v - 0.707_106_781_186_547_5).abs() < 1e-12);
    }

    #[test]
    fn tarantula_is_zero_without_failing_coverage() {
        for c in [BaseCounts::new(0, 3, 1, 1), BaseCounts::new(0, 0, 0, 0), BaseCounts::new(0, 1, 0, 4)] {
            assert_eq!(ClassicFormula::Tarantula.evaluate(c), 0.0);
        }
    }

    #[test]
    fn tarantula_without_successes_is_one_for_any_covered_triple() {
        assert_eq!(ClassicFormula::Tarantula.evaluate(BaseCounts::new(1, 3, 0, 0)), 1.0);
        assert_eq!(ClassicFormula::Tarantula.evaluate(BaseCounts::new(4, 0, 0, 0)), 1.0);
    }

    #[test]
    fn zero_denominators_give_zero() {
        let none = BaseCounts::default();
        for f in ClassicFormula::ALL {
            assert_eq!(f.evaluate(none), 0.0, "{f}");
        }
        // cs + uf = 0 with cf > 0
        assert_eq!(ClassicFormula::Dstar2.evaluate(BaseCounts::new(3, 0, 0, 2)), 0.0);
        assert_eq!(ClassicFormula::Dstar2.evaluate(BaseCounts::new(3, 1, 2, 0)), 3.0);
    }

    #[test]
    fn jaccard_value() {
        assert_eq!(ClassicFormula::Jaccard.evaluate(BaseCounts::new(2, 1, 1, 0)), 0.5);
    }

    #[test]
    fn parses_names() {
        assert_eq!("Dstar2".parse::<ClassicFormula>().unwrap(), ClassicFormula::Dstar2);
        assert!("dstar3".parse::<ClassicFormula>().is_err());
    }
}
