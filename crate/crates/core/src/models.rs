//! Local hidden-variable models and the analytic singlet reference.
//!
//! A model is a source distribution for the hidden variable plus one response
//! function per station. A station's response sees only its own direction and
//! the hidden variable; the other station's setting is not an argument.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Substream;
use crate::types::{norm, Direction, Outcome, Side, UNIT_TOLERANCE};

/// State emitted by the source in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum HiddenVariable {
    /// A point of the unit ball: direction `e` and length coordinate `s`.
    Pearle { e: Direction, s: f64 },
    /// A fair coin, `±1`.
    Socks { coin: i8 },
}

pub trait LhvModel: Send + Sync {
    fn name(&self) -> &str;

    fn source_sample(&self, rng: &mut Substream) -> HiddenVariable;

    /// Response of `side`'s station, a function of its own direction and the
    /// hidden variable only.
    fn station(&self, side: Side, direction: &Direction, lambda: &HiddenVariable) -> Result<Outcome>;

    fn station_a(&self, direction: &Direction, lambda: &HiddenVariable) -> Result<Outcome> {
        self.station(Side::Alice, direction, lambda)
    }

    fn station_b(&self, direction: &Direction, lambda: &HiddenVariable) -> Result<Outcome> {
        self.station(Side::Bob, direction, lambda)
    }
}

pub fn model_by_name(name: &str) -> Result<Box<dyn LhvModel>> {
    match name {
        "pearle" => Ok(Box::new(PearleModel::default())),
        "socks" => Ok(Box::new(SocksModel)),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Bertlmann's socks: `X = -Y = λ`, whatever the settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct SocksModel;

pub fn socks_source(rng: &mut Substream) -> HiddenVariable {
    HiddenVariable::Socks {
        coin: if rng.gen::<bool>() { 1 } else { -1 },
    }
}

pub fn socks_station(side: Side, _direction: &Direction, lambda: &HiddenVariable) -> Result<Outcome> {
    match *lambda {
        HiddenVariable::Socks { coin } => {
            let own = Outcome::from_value(coin)?;
            if !own.is_detected() {
                return Err(Error::Domain("socks coin must be ±1".into()));
            }
            Ok(match side {
                Side::Alice => own,
                Side::Bob => own.negate(),
            })
        }
        HiddenVariable::Pearle { .. } => Err(Error::Structural(
            "socks station received a Pearle hidden variable".into(),
        )),
    }
}

impl LhvModel for SocksModel {
    fn name(&self) -> &str {
        "socks"
    }

    fn source_sample(&self, rng: &mut Substream) -> HiddenVariable {
        socks_source(rng)
    }

    fn station(&self, side: Side, direction: &Direction, lambda: &HiddenVariable) -> Result<Outcome> {
        socks_station(side, direction, lambda)
    }
}

/// `e` uniform on the sphere, `s` uniform on `[0, 1]`.
pub fn pearle_source(rng: &mut Substream) -> HiddenVariable {
    let z: f64 = 2.0 * rng.gen::<f64>() - 1.0;
    let phi: f64 = 2.0 * PI * rng.gen::<f64>();
    let s: f64 = rng.gen();
    let r = (1.0 - z * z).max(0.0).sqrt();
    let (sin, cos) = phi.sin_cos();
    let v = [r * cos, r * sin, z];
    // The construction is unit up to rounding; renormalize to stay well inside
    // the tolerance.
    let n = norm(&v);
    let e = Direction::new(v[0] / n, v[1] / n, v[2] / n).expect("unit vector by construction");
    HiddenVariable::Pearle { e, s }
}

/// Detection threshold `τ(s) = 2/√(1+3s) − 1`.
pub fn pearle_threshold(s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("threshold argument {s} outside [0, 1]")));
    }
    Ok(closed_form_threshold(s))
}

fn closed_form_threshold(s: f64) -> f64 {
    (2.0 / (1.0 + 3.0 * s).sqrt() - 1.0).clamp(0.0, 1.0)
}

/// Distribution of the threshold, as a function of the uniform coordinate `s`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Threshold {
    /// `2/√(1+3s) − 1`.
    #[default]
    ClosedForm,
    /// The same threshold for every `s`.
    Constant {
        value: f64,
    },
    Tabulated(TabulatedThreshold),
}

impl Threshold {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Threshold::ClosedForm => closed_form_threshold(s.clamp(0.0, 1.0)),
            Threshold::Constant { value } => *value,
            Threshold::Tabulated(table) => table.eval(s),
        }
    }

    /// Points of `[0, 1]` where `eval` has a kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Threshold::Tabulated(table) => table.breakpoints(),
            _ => Vec::new(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Threshold::ClosedForm => "closed-form 2/sqrt(1+3s)-1".to_string(),
            Threshold::Constant { value } => format!("constant {value}"),
            Threshold::Tabulated(t) => format!("tabulated ({} knots)", t.knots.len()),
        }
    }
}

/// A threshold law given by a piecewise-linear CDF on knots `0 = t0 < … < tK = 1`.
///
/// With `s` uniform, `τ(s) = F⁻¹(1 − s)` has CDF `F`, so the threshold is
/// non-increasing in `s` like the closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedThreshold {
    pub knots: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl TabulatedThreshold {
    pub fn new(knots: Vec<f64>, cdf: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != cdf.len() {
            return Err(Error::Domain(
                "tabulated threshold needs matching knots and CDF values".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) || knots[0] < 0.0 || *knots.last().unwrap() > 1.0 {
            return Err(Error::Domain("threshold knots must increase within [0, 1]".into()));
        }
        if cdf.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("threshold CDF must be non-decreasing".into()));
        }
        if cdf[0].abs() > 1e-12 || (cdf.last().unwrap() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("threshold CDF must run from 0 to 1".into()));
        }
        Ok(TabulatedThreshold { knots, cdf })
    }

    /// `F⁻¹(1 − s)`.
    pub fn eval(&self, s: f64) -> f64 {
        let u = (1.0 - s).clamp(0.0, 1.0);
        // First knot with cdf >= u.
        let k = self.cdf.partition_point(|&f| f < u);
        if k == 0 {
            return self.knots[0];
        }
        if k >= self.cdf.len() {
            return *self.knots.last().unwrap();
        }
        let (f0, f1) = (self.cdf[k - 1], self.cdf[k]);
        let (t0, t1) = (self.knots[k - 1], self.knots[k]);
        if f1 <= f0 {
            return t1;
        }
        t0 + (t1 - t0) * (u - f0) / (f1 - f0)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .cdf
            .iter()
            .map(|f| 1.0 - f)
            .filter(|s| *s > 0.0 && *s < 1.0)
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        pts
    }
}

/// Pearle's detection-loophole model.
#[derive(Debug, Clone, Default)]
pub struct PearleModel {
    pub threshold: Threshold,
}

impl PearleModel {
    pub fn new(threshold: Threshold) -> Self {
        PearleModel { threshold }
    }

    /// Whether a station at `direction` would detect `λ`.
    pub fn detects(&self, direction: &Direction, lambda: &HiddenVariable) -> Result<bool> {
        match lambda {
            HiddenVariable::Pearle { e, s } => Ok(e.dot(direction).abs() >= self.threshold.eval(*s)),
            HiddenVariable::Socks { .. } => Err(Error::Structural(
                "Pearle station received a socks hidden variable".into(),
            )),
        }
    }
}

pub fn pearle_station(
    side: Side,
    direction: &Direction,
    lambda: &HiddenVariable,
    threshold: &Threshold,
) -> Result<Outcome> {
    match *lambda {
        HiddenVariable::Pearle { e, s } => {
            let c = e.dot(direction);
            if c.abs() < threshold.eval(s) {
                return Ok(Outcome::NoDetection);
            }
            let sign = Outcome::sign_of(c);
            Ok(match side {
                Side::Alice => sign,
                Side::Bob => sign.negate(),
            })
        }
        HiddenVariable::Socks { .. } => Err(Error::Structural(
            "Pearle station received a socks hidden variable".into(),
        )),
    }
}

impl LhvModel for PearleModel {
    fn name(&self) -> &str {
        "pearle"
    }

    fn source_sample(&self, rng: &mut Substream) -> HiddenVariable {
        pearle_source(rng)
    }

    fn station(&self, side: Side, direction: &Direction, lambda: &HiddenVariable) -> Result<Outcome> {
        pearle_station(side, direction, lambda, &self.threshold)
    }
}

/// Quantum prediction for the singlet state, `−a·b`.
pub fn singlet_correlation(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    for v in [&a, &b] {
        let n = norm(v);
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Domain(format!("{v:?} is not a unit vector")));
        }
    }
    Ok(-crate::types::dot(&a, &b))
}
