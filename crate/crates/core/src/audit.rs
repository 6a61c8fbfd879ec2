//! No-conspiracy auditor.
//!
//! Compares the distribution of scalar functionals of the hidden variable
//! across setting cells. Under no-conspiracy these distributions coincide
//! within the full ensemble; conditioning on detection can break that.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::HiddenVariable;
use crate::stats::ks_two_sample;
use crate::types::{Direction, TrialRecord};

/// Family-wise significance level of the audit.
pub const DEFAULT_ALPHA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditConditioning {
    All,
    DetectedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "CONSPIRACY-FREE")]
    ConspiracyFree,
    #[serde(rename = "CONSPIRACY DETECTED")]
    ConspiracyDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub functional: String,
    pub cell_a: usize,
    pub cell_b: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSummary {
    pub name: String,
    pub max_statistic: f64,
    pub min_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub conditioning: AuditConditioning,
    pub alpha: f64,
    /// Projection directions used by the `e.d{k}` functionals.
    pub directions: Vec<Direction>,
    pub cells: Vec<usize>,
    pub cell_sizes: Vec<usize>,
    pub n_tests: usize,
    pub functionals: Vec<FunctionalSummary>,
    pub comparisons: Vec<Comparison>,
    pub max_statistic: f64,
    pub min_p_value: f64,
    /// Bonferroni-adjusted `min_p_value`.
    pub adjusted_p_value: f64,
    pub verdict: Verdict,
}

impl AuditReport {
    pub fn functional(&self, name: &str) -> Option<&FunctionalSummary> {
        self.functionals.iter().find(|f| f.name == name)
    }
}

struct Functional {
    name: String,
    eval: Box<dyn Fn(&HiddenVariable) -> f64>,
}

fn pearle_functionals(directions: &[Direction]) -> Vec<Functional> {
    let mut out = vec![Functional {
        name: "s".into(),
        eval: Box::new(|l| match l {
            HiddenVariable::Pearle { s, .. } => *s,
            HiddenVariable::Socks { .. } => f64::NAN,
        }),
    }];
    for (k, d) in directions.iter().enumerate() {
        let d = *d;
        let project = move |l: &HiddenVariable| match l {
            HiddenVariable::Pearle { e, .. } => e.dot(&d),
            HiddenVariable::Socks { .. } => f64::NAN,
        };
        out.push(Functional {
            name: format!("e.d{k}"),
            eval: Box::new(project),
        });
        out.push(Functional {
            name: format!("|e.d{k}|"),
            eval: Box::new(move |l| project(l).abs()),
        });
    }
    out
}

fn socks_functionals() -> Vec<Functional> {
    vec![Functional {
        name: "coin".into(),
        eval: Box::new(|l| match l {
            HiddenVariable::Socks { coin } => *coin as f64,
            HiddenVariable::Pearle { .. } => f64::NAN,
        }),
    }]
}

/// Distinct station directions appearing in `records`, in first-seen order.
fn distinct_directions(records: &[TrialRecord]) -> Vec<Direction> {
    let mut dirs: Vec<Direction> = Vec::new();
    for r in records {
        for d in [r.setting_a.direction, r.setting_b.direction] {
            if !dirs.iter().any(|x| x.approx_eq(&d, 1e-12)) {
                dirs.push(d);
            }
        }
    }
    dirs
}

pub fn conspiracy_audit(records: &[TrialRecord], conditioning: AuditConditioning, alpha: f64) -> Result<AuditReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    let Some(first) = records.iter().find_map(|r| r.hidden) else {
        return Err(Error::AuditImpossible("records carry no hidden-variable traces".into()));
    };
    if records.iter().any(|r| r.hidden.is_none()) {
        return Err(Error::AuditImpossible(
            "some records lack hidden-variable traces".into(),
        ));
    }
    let pearle = matches!(first, HiddenVariable::Pearle { .. });
    if records
        .iter()
        .any(|r| matches!(r.hidden, Some(HiddenVariable::Pearle { .. })) != pearle)
    {
        return Err(Error::AuditImpossible("records mix hidden-variable models".into()));
    }

    let n_cells = records.iter().map(|r| r.cell).max().unwrap_or(0) + 1;
    let mut groups: Vec<Vec<&HiddenVariable>> = vec![Vec::new(); n_cells];
    for r in records {
        if conditioning == AuditConditioning::All || r.both_detected() {
            groups[r.cell].push(r.hidden.as_ref().unwrap());
        }
    }
    let present: Vec<usize> = (0..n_cells).filter(|&c| records.iter().any(|r| r.cell == c)).collect();
    if present.len() < 2 {
        return Err(Error::AuditImpossible("fewer than two setting cells present".into()));
    }
    let cells: Vec<usize> = present.iter().copied().filter(|&c| !groups[c].is_empty()).collect();
    if cells.len() < 2 {
        return Err(Error::AuditImpossible(
            "fewer than two setting cells survive the conditioning".into(),
        ));
    }

    let directions = if pearle {
        distinct_directions(records)
    } else {
        Vec::new()
    };
    let functionals = if pearle {
        pearle_functionals(&directions)
    } else {
        socks_functionals()
    };

    let mut comparisons = Vec::new();
    let mut summaries = Vec::new();
    for f in &functionals {
        let samples: Vec<Vec<f64>> = cells
            .iter()
            .map(|&c| groups[c].iter().map(|l| (f.eval)(l)).collect())
            .collect();
        let mut summary = FunctionalSummary {
            name: f.name.clone(),
            max_statistic: 0.0,
            min_p_value: 1.0,
        };
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                let ks = ks_two_sample(&samples[i], &samples[j])?;
                summary.max_statistic = summary.max_statistic.max(ks.statistic);
                summary.min_p_value = summary.min_p_value.min(ks.p_value);
                comparisons.push(Comparison {
                    functional: f.name.clone(),
                    cell_a: cells[i],
                    cell_b: cells[j],
                    n_a: samples[i].len(),
                    n_b: samples[j].len(),
                    statistic: ks.statistic,
                    p_value: ks.p_value,
                });
            }
        }
        summaries.push(summary);
    }

    let n_tests = comparisons.len();
    let max_statistic = comparisons.iter().map(|c| c.statistic).fold(0.0, f64::max);
    let min_p_value = comparisons.iter().map(|c| c.p_value).fold(1.0, f64::min);
    let adjusted_p_value = (min_p_value * n_tests as f64).min(1.0);
    let verdict = if adjusted_p_value < alpha {
        Verdict::ConspiracyDetected
    } else {
        Verdict::ConspiracyFree
    };
    Ok(AuditReport {
        conditioning,
        alpha,
        directions,
        cell_sizes: cells.iter().map(|&c| groups[c].len()).collect(),
        cells,
        n_tests,
        functionals: summaries,
        comparisons,
        max_statistic,
        min_p_value,
        adjusted_p_value,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_experiment, Geometry, RunConfig, SettingsMode};
    use std::f64::consts::FRAC_PI_2;

    fn records(model: &str, geometry: Geometry, slots: u64, seed: u64) -> Vec<TrialRecord> {
        let mut c = RunConfig::new(model, geometry, seed);
        c.slots = slots;
        c.audit_trace = true;
        run_experiment(&c).unwrap().records.unwrap()
    }

    #[test]
    fn detected_only_exposes_pearle() {
        let r = records(
            "pearle",
            Geometry::Grid {
                angles: vec![0.0, FRAC_PI_2],
            },
            100_000,
            1,
        );
        let all = conspiracy_audit(&r, AuditConditioning::All, DEFAULT_ALPHA).unwrap();
        assert_eq!(all.verdict, Verdict::ConspiracyFree);
        let det = conspiracy_audit(&r, AuditConditioning::DetectedOnly, DEFAULT_ALPHA).unwrap();
        assert_eq!(det.verdict, Verdict::ConspiracyDetected);
        // d0 is Alice's direction, shared by both cells.
        assert!(det.functional("|e.d0|").unwrap().min_p_value < 1e-3);
    }

    #[test]
    fn socks_is_clean_either_way() {
        let r = records("socks", Geometry::optimal_chsh(), 20_000, 2);
        for cond in [AuditConditioning::All, AuditConditioning::DetectedOnly] {
            let rep = conspiracy_audit(&r, cond, DEFAULT_ALPHA).unwrap();
            assert_eq!(rep.verdict, Verdict::ConspiracyFree);
            assert_eq!(rep.n_tests, 6);
        }
    }

    #[test]
    fn verdict_is_deterministic() {
        let mut c = RunConfig::new("pearle", Geometry::optimal_chsh(), 3);
        c.slots = 5_000;
        c.audit_trace = true;
        c.mode = SettingsMode::RandomSettings;
        let r = run_experiment(&c).unwrap().records.unwrap();
        let a = conspiracy_audit(&r, AuditConditioning::DetectedOnly, 0.01).unwrap();
        let b = conspiracy_audit(&r, AuditConditioning::DetectedOnly, 0.01).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn audit_needs_traces_and_cells() {
        let mut r = records("pearle", Geometry::optimal_chsh(), 100, 4);
        let one_cell: Vec<TrialRecord> = r.iter().filter(|x| x.cell == 0).cloned().collect();
        assert!(matches!(
            conspiracy_audit(&one_cell, AuditConditioning::All, DEFAULT_ALPHA),
            Err(Error::AuditImpossible(_))
        ));
        r[5].hidden = None;
        assert!(matches!(
            conspiracy_audit(&r, AuditConditioning::All, DEFAULT_ALPHA),
            Err(Error::AuditImpossible(_))
        ));
        assert!(matches!(
            conspiracy_audit(&[], AuditConditioning::All, DEFAULT_ALPHA),
            Err(Error::AuditImpossible(_))
        ));
    }
}
