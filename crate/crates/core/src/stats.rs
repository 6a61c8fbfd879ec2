//! Correlation estimators, the eight CHSH statistics, detection accounting
//! and the two-sample Kolmogorov–Smirnov test.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{KeySpace, Tally};

/// Default violation gate, in standard errors.
pub const DEFAULT_K_SIGMA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// Mean of `n` products in `{-1, 0, +1}` with sum `sum`.
    fn of_products(sum: i64, n: u64) -> Estimate {
        let value = sum as f64 / n as f64;
        let se = ((1.0 - value * value).max(0.0) / n as f64).sqrt();
        Estimate { value, se }
    }
}

/// Time-slot correlation: no-shows count in the denominator.
pub fn correlation_full(tally: &Tally, cell: usize) -> Result<Estimate> {
    let c = tally.cell(cell)?;
    if c.n_slots == 0 {
        return Err(Error::NoData(format!("{} has no slots", tally.space().cell_name(cell))));
    }
    Ok(Estimate::of_products(c.sum_product_all, c.n_slots))
}

/// Correlation conditional on both stations detecting.
pub fn correlation_postselected(tally: &Tally, cell: usize) -> Result<Estimate> {
    let c = tally.cell(cell)?;
    if c.n_detected_pairs == 0 {
        return Err(Error::UndefinedConditional(tally.space().cell_name(cell)));
    }
    Ok(Estimate::of_products(c.sum_product_detected, c.n_detected_pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    Full,
    Postselected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub n_slots: u64,
    pub n_detected_pairs: u64,
    pub e_full: Option<f64>,
    pub se_full: Option<f64>,
    /// `None` when no pair was detected.
    pub e_post: Option<f64>,
    pub se_post: Option<f64>,
}

impl CorrelationEntry {
    /// An entry with the same value under both conditionings.
    pub fn exact(value: f64) -> Self {
        CorrelationEntry {
            n_slots: 0,
            n_detected_pairs: 0,
            e_full: Some(value),
            se_full: Some(0.0),
            e_post: Some(value),
            se_post: Some(0.0),
        }
    }

    pub fn get(&self, which: Which) -> Option<Estimate> {
        let (v, se) = match which {
            Which::Full => (self.e_full, self.se_full),
            Which::Postselected => (self.e_post, self.se_post),
        };
        Some(Estimate { value: v?, se: se? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub space: KeySpace,
    pub entries: Vec<CorrelationEntry>,
}

impl CorrelationTable {
    pub fn from_tally(tally: &Tally) -> Self {
        let entries = (0..tally.cells().len())
            .map(|cell| {
                let c = tally.cells()[cell];
                let full = correlation_full(tally, cell).ok();
                let post = correlation_postselected(tally, cell).ok();
                CorrelationEntry {
                    n_slots: c.n_slots,
                    n_detected_pairs: c.n_detected_pairs,
                    e_full: full.map(|e| e.value),
                    se_full: full.map(|e| e.se),
                    e_post: post.map(|e| e.value),
                    se_post: post.map(|e| e.se),
                }
            })
            .collect();
        CorrelationTable {
            space: tally.space(),
            entries,
        }
    }

    /// A setting-pair table with known values `[E11, E12, E21, E22]`.
    pub fn from_values(values: [f64; 4]) -> Self {
        CorrelationTable {
            space: KeySpace::SettingPairs,
            entries: values.iter().map(|&v| CorrelationEntry::exact(v)).collect(),
        }
    }
}

/// Signs `(s1, s2, s3, s4)` applied to `(E11, E12, E21, E22)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignPattern(pub [i8; 4]);

impl SignPattern {
    /// The eight patterns with an odd number of minus signs.
    pub fn all() -> Vec<SignPattern> {
        (0u8..16)
            .map(|bits| {
                let mut s = [1i8; 4];
                for (k, v) in s.iter_mut().enumerate() {
                    if bits & (1 << (3 - k)) != 0 {
                        *v = -1;
                    }
                }
                SignPattern(s)
            })
            .filter(|p| p.negatives() % 2 == 1)
            .collect()
    }

    pub fn negatives(&self) -> usize {
        self.0.iter().filter(|&&s| s < 0).count()
    }

    pub fn apply(&self, values: [f64; 4]) -> f64 {
        self.0.iter().zip(values).map(|(&s, v)| s as f64 * v).sum()
    }
}

impl fmt::Display for SignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p: Vec<&str> = self.0.iter().map(|&s| if s > 0 { "+" } else { "-" }).collect();
        write!(f, "({})", p.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshEntry {
    pub pattern: SignPattern,
    pub statistic: f64,
    pub se: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshReport {
    pub which: Which,
    pub k_sigma: f64,
    pub correlations: [f64; 4],
    pub entries: Vec<ChshEntry>,
}

impl ChshReport {
    pub fn max_statistic(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.statistic)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_entry(&self) -> &ChshEntry {
        self.entries
            .iter()
            .max_by(|a, b| a.statistic.total_cmp(&b.statistic))
            .expect("eight entries")
    }

    pub fn any_violation(&self) -> bool {
        self.entries.iter().any(|e| e.violation)
    }
}

/// Evaluates every one-sided CHSH statistic on a setting-pair table.
pub fn chsh_all(table: &CorrelationTable, which: Which, k_sigma: f64) -> Result<ChshReport> {
    if table.space != KeySpace::SettingPairs || table.entries.len() != 4 {
        return Err(Error::Structural("CHSH needs a four-cell setting-pair table".into()));
    }
    let mut values = [0.0; 4];
    let mut var = 0.0;
    for (cell, entry) in table.entries.iter().enumerate() {
        let est = entry.get(which).ok_or_else(|| {
            let name = table.space.cell_name(cell);
            match which {
                Which::Full => Error::NoData(name),
                Which::Postselected => Error::UndefinedConditional(name),
            }
        })?;
        values[cell] = est.value;
        var += est.se * est.se;
    }
    let se = var.sqrt();
    let entries = SignPattern::all()
        .into_iter()
        .map(|pattern| {
            let statistic = pattern.apply(values);
            ChshEntry {
                pattern,
                statistic,
                se,
                violation: statistic > 2.0 + k_sigma * se,
            }
        })
        .collect();
    Ok(ChshReport {
        which,
        k_sigma,
        correlations: values,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCell {
    /// `M` for this cell.
    pub n_slots: u64,
    /// `Ns` for this cell.
    pub n_detected_pairs: u64,
    pub retained_fraction: f64,
    /// Binomial counting error of `retained_fraction`.
    pub retained_se: f64,
    pub efficiency_a: f64,
    pub efficiency_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub cells: Vec<DetectionCell>,
    pub total_slots: u64,
    pub total_detected_pairs: u64,
    pub retained_fraction: f64,
    pub missing_pairs: u64,
}

fn fraction(k: u64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

pub fn detection_stats(tally: &Tally) -> DetectionReport {
    let cells = tally
        .cells()
        .iter()
        .map(|c| {
            let f = fraction(c.n_detected_pairs, c.n_slots);
            DetectionCell {
                n_slots: c.n_slots,
                n_detected_pairs: c.n_detected_pairs,
                retained_fraction: f,
                retained_se: if c.n_slots == 0 {
                    0.0
                } else {
                    (f * (1.0 - f) / c.n_slots as f64).sqrt()
                },
                efficiency_a: fraction(c.n_detected_a, c.n_slots),
                efficiency_b: fraction(c.n_detected_b, c.n_slots),
            }
        })
        .collect();
    let total = tally.total_slots();
    let detected = tally.total_detected_pairs();
    DetectionReport {
        cells,
        total_slots: total,
        total_detected_pairs: detected,
        retained_fraction: fraction(detected, total),
        missing_pairs: total - detected,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(sample_a: &[f64], sample_b: &[f64]) -> Result<KsResult> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::Domain("KS test needs two non-empty samples".into()));
    }
    if sample_a.iter().chain(sample_b).any(|x| x.is_nan()) {
        return Err(Error::Domain("KS samples contain NaN".into()));
    }
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        // Step past every copy of the smaller value in both samples so ties
        // are compared after the jump.
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n as f64 * m as f64) / (n + m) as f64;
    let root = ne.sqrt();
    let lambda = (root + 0.12 + 0.11 / root) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Small-λ form of the CDF: √(2π)/λ Σ exp(−(2k−1)²π²/(8λ²)).
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=20)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (-odd * odd * c).exp()
            })
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
