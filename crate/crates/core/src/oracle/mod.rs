//! Ground truth independent of the Monte Carlo path: exhaustive enumeration
//! of the CHSH expressions and deterministic quadrature of the Pearle model.

mod enumerate;
pub mod nnls;
pub mod quadrature;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use enumerate::{enumerate_quadruples, quadruples, z_value, EnumerationReport, OutcomeDomain, PatternExtremes};

use crate::error::{Error, Result};
use crate::models::{TabulatedThreshold, Threshold};
use quadrature::integrate_pieces;

/// Absolute tolerance of the inner (sphere) integral.
const INNER_TOL: f64 = 1e-11;
/// Absolute tolerance of the outer (threshold) integral.
const OUTER_TOL: f64 = 1e-9;
const MAX_INTERVALS: usize = 4096;

/// A threshold law `s ↦ τ(s) ∈ [0, 1]`.
pub trait ThresholdFn: Sync {
    fn eval(&self, s: f64) -> f64;

    /// Known kinks of `eval` inside `(0, 1)`.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    fn describe(&self) -> String {
        "custom".to_string()
    }
}

impl ThresholdFn for Threshold {
    fn eval(&self, s: f64) -> f64 {
        Threshold::eval(self, s)
    }

    fn breakpoints(&self) -> Vec<f64> {
        Threshold::breakpoints(self)
    }

    fn describe(&self) -> String {
        Threshold::describe(self)
    }
}

/// Wraps a closure as a [`ThresholdFn`].
pub struct FnThreshold<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> ThresholdFn for FnThreshold<F> {
    fn eval(&self, s: f64) -> f64 {
        (self.0)(s)
    }
}

/// Density of the coordinate `s` on `[0, 1]`.
pub trait SDensity: Sync {
    fn density(&self, s: f64) -> f64;

    fn describe(&self) -> String {
        "custom".to_string()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformDensity;

impl SDensity for UniformDensity {
    fn density(&self, _s: f64) -> f64 {
        1.0
    }

    fn describe(&self) -> String {
        "uniform".to_string()
    }
}

pub struct FnDensity<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> SDensity for FnDensity<F> {
    fn density(&self, s: f64) -> f64 {
        (self.0)(s)
    }
}

/// Arc overlaps for a fixed height `z` of `e` above the measurement plane.
///
/// With `e = (r cos φ, r sin φ, z)`, `a = (1, 0, 0)` and `b = (cos θ, sin θ, 0)`,
/// each station detects on two opposite arcs of `φ` of half-width
/// `β = acos(t / r)`. Returns the measure of `φ` where both detect and the
/// same measure weighted by `sign(e·a) sign(e·b)`.
fn arc_measures(z: f64, t: f64, theta: f64) -> [f64; 2] {
    let r = (1.0 - z * z).max(0.0).sqrt();
    if r == 0.0 || t > r {
        return [0.0, 0.0];
    }
    let beta = (t / r).min(1.0).acos();
    let same = (2.0 * beta - theta).max(0.0);
    let opposite = (2.0 * beta - (PI - theta)).max(0.0);
    [2.0 * (same + opposite), 2.0 * (same - opposite)]
}

/// `[P(both detect), E(sign(e·a) sign(e·b); both detect)]` for a fixed threshold `t`.
pub fn sphere_measures(t: f64, theta: f64) -> Result<[f64; 2]> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Numeric(format!("threshold value {t} outside [0, 1]")));
    }
    let z_max = (1.0 - t * t).max(0.0).sqrt();
    if z_max == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let mut points = vec![0.0, z_max];
    for c in [(theta / 2.0).cos(), (theta / 2.0).sin()] {
        if c > 0.0 {
            let r = t / c;
            if r < 1.0 {
                let z = (1.0 - r * r).sqrt();
                if z > 0.0 && z < z_max {
                    points.push(z);
                }
            }
        }
    }
    points.sort_by(f64::total_cmp);
    // By symmetry z ↦ −z the half [0, 1] carries half the uniform weight;
    // the factor 1/(2π) normalizes the azimuth.
    let r = integrate_pieces(|z| arc_measures(z, t, theta), &points, INNER_TOL, MAX_INTERVALS)?;
    Ok([r.value[0] / (2.0 * PI), r.value[1] / (2.0 * PI)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearleQuadrature {
    pub theta: f64,
    /// `p(θ)`: probability that both stations detect.
    pub detection_probability: f64,
    /// `c(θ)`: post-selected correlation; `None` when `p(θ) = 0`.
    pub correlation: Option<f64>,
    pub error_estimate: f64,
}

fn check_density(density: &dyn SDensity) -> Result<()> {
    let total = integrate_pieces(
        |s| {
            let d = density.density(s);
            [if d.is_finite() { d } else { f64::NAN }]
        },
        &[0.0, 1.0],
        1e-10,
        MAX_INTERVALS,
    )?;
    if (total.value[0] - 1.0).abs() > 1e-6 {
        return Err(Error::Numeric(format!(
            "density of s integrates to {} instead of 1",
            total.value[0]
        )));
    }
    Ok(())
}

fn outer_points(threshold: &dyn ThresholdFn) -> Vec<f64> {
    let mut pts = vec![0.0];
    pts.extend(threshold.breakpoints().into_iter().filter(|s| *s > 0.0 && *s < 1.0));
    pts.push(1.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

fn pearle_integrals(theta: f64, threshold: &dyn ThresholdFn, density: &dyn SDensity) -> Result<([f64; 2], f64)> {
    let points = outer_points(threshold);
    let mut failure: Option<Error> = None;
    let r = integrate_pieces(
        |s| {
            if failure.is_some() {
                return [0.0, 0.0];
            }
            let t = threshold.eval(s);
            match sphere_measures(t, theta) {
                Ok(m) => {
                    let w = density.density(s);
                    [w * m[0], w * m[1]]
                }
                Err(e) => {
                    failure = Some(Error::Numeric(format!("at s = {s}, θ = {theta}: {e}")));
                    [0.0, 0.0]
                }
            }
        },
        &points,
        OUTER_TOL,
        MAX_INTERVALS,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((r.value, r.error))
}

/// Detection probability and post-selected correlation of the Pearle model
/// at angle `theta`, by nested adaptive quadrature.
pub fn pearle_quadrature(theta: f64, threshold: &dyn ThresholdFn, density: &dyn SDensity) -> Result<PearleQuadrature> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::Domain(format!("angle {theta} outside [0, π]")));
    }
    check_density(density)?;
    let ([p, q], err) = pearle_integrals(theta, threshold, density)?;
    let correlation = (p > 1e-12).then(|| (-q / p).clamp(-1.0, 1.0));
    Ok(PearleQuadrature {
        theta,
        detection_probability: p,
        correlation,
        error_estimate: err,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub theta: f64,
    pub detection_probability: f64,
    pub correlation: f64,
    pub target: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateBody {
    pub threshold: String,
    pub density: String,
    pub tolerance: f64,
    pub grid: Vec<f64>,
    pub max_deviation: f64,
    pub worst_angle: f64,
    pub rows: Vec<CertificateRow>,
}

/// A passed check, with a SHA-256 digest of its canonical JSON body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub body: CertificateBody,
    pub sha256: String,
}

impl Certificate {
    fn seal(body: CertificateBody) -> Result<Self> {
        let sha256 = digest_of(&body)?;
        Ok(Certificate { body, sha256 })
    }

    /// Recomputes the digest.
    pub fn is_intact(&self) -> bool {
        digest_of(&self.body).map(|d| d == self.sha256).unwrap_or(false)
    }
}

fn digest_of(body: &CertificateBody) -> Result<String> {
    let json = serde_json::to_vec(body).map_err(|e| Error::Numeric(format!("serializing certificate: {e}")))?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Counterexample {
    Deviation {
        theta: f64,
        correlation: f64,
        target: f64,
        deviation: f64,
        tolerance: f64,
    },
    UndefinedConditional {
        theta: f64,
        detection_probability: f64,
    },
}

impl Counterexample {
    pub fn theta(&self) -> f64 {
        match self {
            Counterexample::Deviation { theta, .. } | Counterexample::UndefinedConditional { theta, .. } => *theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum Verification {
    Certified(Certificate),
    Counterexample(Counterexample),
}

impl Verification {
    pub fn is_certified(&self) -> bool {
        matches!(self, Verification::Certified(_))
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    const EDGE: f64 = 1e-9;
    if grid.len() < 2 {
        return Err(Error::Domain("verification grid needs at least two angles".into()));
    }
    if grid.iter().any(|t| !(0.0..=PI).contains(t)) {
        return Err(Error::Domain("verification angles must lie in [0, π]".into()));
    }
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo > EDGE || hi < PI - EDGE {
        return Err(Error::Domain(format!("grid [{lo}, {hi}] does not cover [0, π]")));
    }
    Ok(())
}

/// Checks `|c(θ) + cos θ| ≤ tol` at every grid angle.
pub fn verify_threshold(
    threshold: &dyn ThresholdFn,
    density: &dyn SDensity,
    grid: &[f64],
    tol: f64,
) -> Result<Verification> {
    check_grid(grid)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &theta in grid {
        let q = pearle_quadrature(theta, threshold, density)?;
        let Some(c) = q.correlation else {
            return Ok(Verification::Counterexample(Counterexample::UndefinedConditional {
                theta,
                detection_probability: q.detection_probability,
            }));
        };
        let target = -theta.cos();
        let deviation = (c - target).abs();
        if deviation > tol {
            return Ok(Verification::Counterexample(Counterexample::Deviation {
                theta,
                correlation: c,
                target,
                deviation,
                tolerance: tol,
            }));
        }
        rows.push(CertificateRow {
            theta,
            detection_probability: q.detection_probability,
            correlation: c,
            target,
            deviation,
        });
    }
    let worst = rows
        .iter()
        .max_by(|a, b| a.deviation.total_cmp(&b.deviation))
        .expect("non-empty grid");
    let body = CertificateBody {
        threshold: threshold.describe(),
        density: density.describe(),
        tolerance: tol,
        grid: grid.to_vec(),
        max_deviation: worst.deviation,
        worst_angle: worst.theta,
        rows,
    };
    Ok(Verification::Certified(Certificate::seal(body)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Number of equal-width bins of the threshold's piecewise-uniform density.
    pub bins: usize,
    /// Reweighting passes (rows are scaled by the current `1/p(θ)`).
    pub passes: usize,
    pub max_iterations: usize,
    /// Weight of the first-difference penalty on the fitted density. The
    /// matching conditions alone admit rough laws that park most of the mass
    /// at thresholds near 1.
    pub smoothing: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            bins: 60,
            passes: 4,
            max_iterations: 2000,
            smoothing: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedThreshold {
    pub threshold: TabulatedThreshold,
    /// Bin probabilities of the threshold law.
    pub weights: Vec<f64>,
    /// `c(θ) + cos θ` at each grid angle, from the fitted linear model.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

impl SolvedThreshold {
    pub fn as_threshold(&self) -> Threshold {
        Threshold::Tabulated(self.threshold.clone())
    }
}

/// Fits a threshold law whose post-selected correlation is `−cos θ` on
/// `grid`, for `s` uniform.
///
/// The law is piecewise uniform on `bins` equal cells of `[0, 1]`. For fixed
/// bin weights `w`, `q(θ) − cos θ · p(θ)` is linear in `w`, so the fit is a
/// non-negative least-squares problem with the normalization as a heavily
/// weighted extra row.
pub fn solve_threshold(grid: &[f64], tol: f64, options: &SolverOptions) -> Result<SolvedThreshold> {
    check_grid(grid)?;
    let k = options.bins.max(1);
    let knots: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
    let n = grid.len();
    // Bin averages of P(t, θ) and Q(t, θ).
    let mut p_bar = DMatrix::zeros(n, k);
    let mut q_bar = DMatrix::zeros(n, k);
    for (row, &theta) in grid.iter().enumerate() {
        for bin in 0..k {
            let (lo, hi) = (knots[bin], knots[bin + 1]);
            let mut failure = None;
            let r = integrate_pieces(
                |t| match sphere_measures(t, theta) {
                    Ok(m) => m,
                    Err(e) => {
                        failure = Some(e);
                        [0.0, 0.0]
                    }
                },
                &[lo, hi],
                OUTER_TOL / k as f64,
                MAX_INTERVALS,
            )?;
            if let Some(e) = failure {
                return Err(e);
            }
            p_bar[(row, bin)] = r.value[0] / (hi - lo);
            q_bar[(row, bin)] = r.value[1] / (hi - lo);
        }
    }
    let constraint = DMatrix::from_fn(n, k, |row, bin| q_bar[(row, bin)] - grid[row].cos() * p_bar[(row, bin)]);

    // The matching rows are homogeneous in `w`; this row only fixes the scale.
    let penalty = 1.0;
    let mut weights = DVector::from_element(k, 1.0 / k as f64);
    let mut residuals = vec![0.0; n];
    for _ in 0..options.passes.max(1) {
        let p = &p_bar * &weights;
        let rough = k - 1;
        let mut a = DMatrix::zeros(n + 1 + rough, k);
        let mut b = DVector::zeros(n + 1 + rough);
        for row in 0..n {
            let scale = 1.0 / p[row].max(1e-6);
            for bin in 0..k {
                a[(row, bin)] = constraint[(row, bin)] * scale;
            }
        }
        for bin in 0..k {
            a[(n, bin)] = penalty;
        }
        b[n] = penalty;
        // Density in bin `i` is `k w_i`.
        for i in 0..rough {
            a[(n + 1 + i, i)] = options.smoothing * k as f64;
            a[(n + 1 + i, i + 1)] = -options.smoothing * k as f64;
        }
        let w = nnls::nnls(&a, &b, options.max_iterations)?;
        let total: f64 = w.sum();
        if total <= 0.0 {
            return Err(Error::Solver {
                message: "fitted threshold law has zero mass".into(),
                max_residual: f64::INFINITY,
                residuals,
            });
        }
        weights = w / total;
        let p = &p_bar * &weights;
        let q = &q_bar * &weights;
        for row in 0..n {
            residuals[row] = if p[row] > 0.0 {
                -q[row] / p[row] + grid[row].cos()
            } else {
                f64::INFINITY
            };
        }
    }
    let max_residual = residuals.iter().map(|r| r.abs()).fold(0.0, f64::max);
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(max_residual <= tol) {
        return Err(Error::Solver {
            message: format!("residual above tolerance {tol:e} with {k} bins"),
            max_residual,
            residuals,
        });
    }
    let mut cdf = Vec::with_capacity(k + 1);
    let mut acc = 0.0;
    cdf.push(0.0);
    for bin in 0..k {
        acc += weights[bin];
        cdf.push(acc.min(1.0));
    }
    cdf[k] = 1.0;
    Ok(SolvedThreshold {
        threshold: TabulatedThreshold::new(knots, cdf)?,
        weights: weights.iter().copied().collect(),
        residuals,
        max_residual,
    })
}

/// `n` equally spaced angles covering `[0, π]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|k| if k == n - 1 { PI } else { PI * k as f64 / (n - 1) as f64 })
        .collect()
}
