use serde::{Deserialize, Serialize};

use crate::stats::SignPattern;
use crate::types::{CounterfactualQuadruple, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeDomain {
    /// `{−1, +1}`.
    Binary,
    /// `{−1, 0, +1}`.
    Ternary,
}

impl OutcomeDomain {
    pub fn values(self) -> &'static [Outcome] {
        match self {
            OutcomeDomain::Binary => &[Outcome::Minus, Outcome::Plus],
            OutcomeDomain::Ternary => &[Outcome::Minus, Outcome::NoDetection, Outcome::Plus],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternExtremes {
    pub pattern: SignPattern,
    pub maximum: i32,
    pub minimum: i32,
    pub maximizers: Vec<CounterfactualQuadruple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationReport {
    pub domain: OutcomeDomain,
    pub assignments: usize,
    pub patterns: Vec<PatternExtremes>,
}

impl EnumerationReport {
    pub fn overall_maximum(&self) -> i32 {
        self.patterns.iter().map(|p| p.maximum).max().unwrap_or(0)
    }
}

/// `Z = s1 X1Y1 + s2 X1Y2 + s3 X2Y1 + s4 X2Y2` for one assignment.
pub fn z_value(q: &CounterfactualQuadruple, pattern: &SignPattern) -> i32 {
    q.products().iter().zip(pattern.0).map(|(p, s)| p * s as i32).sum()
}

/// All assignments of `(X1, X2, Y1, Y2)` over `domain`.
pub fn quadruples(domain: OutcomeDomain) -> Vec<CounterfactualQuadruple> {
    let v = domain.values();
    let mut out = Vec::with_capacity(v.len().pow(4));
    for &x1 in v {
        for &x2 in v {
            for &y1 in v {
                for &y2 in v {
                    out.push(CounterfactualQuadruple::new(x1, x2, y1, y2));
                }
            }
        }
    }
    out
}

/// Exact extremes of every one-sided CHSH expression over all assignments.
pub fn enumerate_quadruples(domain: OutcomeDomain) -> EnumerationReport {
    let all = quadruples(domain);
    let patterns = SignPattern::all()
        .into_iter()
        .map(|pattern| {
            let values: Vec<i32> = all.iter().map(|q| z_value(q, &pattern)).collect();
            let maximum = *values.iter().max().unwrap();
            let minimum = *values.iter().min().unwrap();
            let maximizers = all
                .iter()
                .zip(&values)
                .filter(|(_, &v)| v == maximum)
                .map(|(q, _)| *q)
                .collect();
            PatternExtremes {
                pattern,
                maximum,
                minimum,
                maximizers,
            }
        })
        .collect();
    EnumerationReport {
        domain,
        assignments: all.len(),
        patterns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_assignment() {
        let q = CounterfactualQuadruple::new(Outcome::Plus, Outcome::Plus, Outcome::Plus, Outcome::Plus);
        assert_eq!(z_value(&q, &SignPattern([1, -1, -1, -1])), -2);
    }

    #[test]
    fn binary_bound_is_two() {
        let r = enumerate_quadruples(OutcomeDomain::Binary);
        assert_eq!(r.assignments, 16);
        assert_eq!(r.patterns.len(), 8);
        for p in &r.patterns {
            assert_eq!(p.maximum, 2);
            assert_eq!(p.minimum, -2);
            // Every ±1 assignment gives ±2; half of them hit +2.
            assert_eq!(p.maximizers.len(), 8);
        }
    }

    #[test]
    fn ternary_bound_is_still_two() {
        let r = enumerate_quadruples(OutcomeDomain::Ternary);
        assert_eq!(r.assignments, 81);
        assert!(r.patterns.iter().all(|p| p.maximum == 2 && p.minimum == -2));
        assert_eq!(r.overall_maximum(), 2);
    }
}
