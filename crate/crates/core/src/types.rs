//! Domain types shared by the models, the engine, the estimators and the
//! protocol harness.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::HiddenVariable;

/// Tolerance on the Euclidean norm of a [`Direction`].
pub const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Alice,
    Bob,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Alice => Side::Bob,
            Side::Bob => Side::Alice,
        }
    }
}

/// Which of a station's two settings was selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SettingIndex {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl SettingIndex {
    pub const BOTH: [SettingIndex; 2] = [SettingIndex::One, SettingIndex::Two];

    /// 0 for setting 1, 1 for setting 2.
    pub fn offset(self) -> usize {
        match self {
            SettingIndex::One => 0,
            SettingIndex::Two => 1,
        }
    }

    pub fn number(self) -> u8 {
        self.offset() as u8 + 1
    }

    pub fn from_coin(heads: bool) -> SettingIndex {
        if heads {
            SettingIndex::One
        } else {
            SettingIndex::Two
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SettingLabel {
    pub side: Side,
    pub index: SettingIndex,
}

impl SettingLabel {
    pub fn new(side: Side, index: SettingIndex) -> Self {
        SettingLabel { side, index }
    }

    pub fn all() -> [SettingLabel; 4] {
        use SettingIndex::*;
        [
            SettingLabel::new(Side::Alice, One),
            SettingLabel::new(Side::Alice, Two),
            SettingLabel::new(Side::Bob, One),
            SettingLabel::new(Side::Bob, Two),
        ]
    }
}

impl fmt::Display for SettingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.side {
            Side::Alice => "A",
            Side::Bob => "B",
        };
        write!(f, "{}{}", name, self.index.number())
    }
}

/// A measurement direction: a unit vector in three-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Direction([f64; 3]);

impl Direction {
    /// Checked constructor; the components must already have unit norm.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let v = [x, y, z];
        let norm = norm(&v);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Domain(format!(
                "direction ({x}, {y}, {z}) has norm {norm}, expected 1"
            )));
        }
        Ok(Direction(v))
    }

    /// Rescales a non-zero vector to unit length.
    pub fn normalized(v: [f64; 3]) -> Result<Self> {
        let n = norm(&v);
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Domain(format!("cannot normalize {v:?}")));
        }
        Ok(Direction([v[0] / n, v[1] / n, v[2] / n]))
    }

    /// The direction `(cos θ, sin θ, 0)` in the measurement plane.
    pub fn planar(theta: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        Direction([cos, sin, 0.0])
    }

    pub fn components(&self) -> [f64; 3] {
        self.0
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        dot(&self.0, &other.0)
    }

    /// Polar angle in the x-y plane, in `(-π, π]`.
    pub fn planar_angle(&self) -> f64 {
        self.0[1].atan2(self.0[0])
    }

    pub fn approx_eq(&self, other: &Direction, tol: f64) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| (a - b).abs() <= tol)
    }
}

impl TryFrom<[f64; 3]> for Direction {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Direction::new(v[0], v[1], v[2])
    }
}

impl From<Direction> for [f64; 3] {
    fn from(d: Direction) -> Self {
        d.0
    }
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(v: &[f64; 3]) -> f64 {
    dot(v, v).sqrt()
}

/// A station's reading. `NoDetection` is the "no show" outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Outcome {
    Minus,
    NoDetection,
    Plus,
}

impl Outcome {
    pub fn value(self) -> i8 {
        match self {
            Outcome::Minus => -1,
            Outcome::NoDetection => 0,
            Outcome::Plus => 1,
        }
    }

    pub fn from_value(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(Outcome::Minus),
            0 => Ok(Outcome::NoDetection),
            1 => Ok(Outcome::Plus),
            other => Err(Error::Domain(format!("outcome {other} not in {{-1, 0, +1}}"))),
        }
    }

    /// `sign(x)` with `sign(0) = +1`.
    pub fn sign_of(x: f64) -> Outcome {
        if x >= 0.0 {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }

    pub fn negate(self) -> Outcome {
        match self {
            Outcome::Minus => Outcome::Plus,
            Outcome::NoDetection => Outcome::NoDetection,
            Outcome::Plus => Outcome::Minus,
        }
    }

    pub fn is_detected(self) -> bool {
        self != Outcome::NoDetection
    }
}

impl TryFrom<i8> for Outcome {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        Outcome::from_value(v)
    }
}

impl From<Outcome> for i8 {
    fn from(o: Outcome) -> Self {
        o.value()
    }
}

/// The four counterfactual outcomes `(X1, X2, Y1, Y2)` of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CounterfactualQuadruple {
    pub x1: Outcome,
    pub x2: Outcome,
    pub y1: Outcome,
    pub y2: Outcome,
}

impl CounterfactualQuadruple {
    pub fn new(x1: Outcome, x2: Outcome, y1: Outcome, y2: Outcome) -> Self {
        CounterfactualQuadruple { x1, x2, y1, y2 }
    }

    /// The products `[X1 Y1, X1 Y2, X2 Y1, X2 Y2]`.
    pub fn products(&self) -> [i32; 4] {
        let (x1, x2) = (self.x1.value() as i32, self.x2.value() as i32);
        let (y1, y2) = (self.y1.value() as i32, self.y2.value() as i32);
        [x1 * y1, x1 * y2, x2 * y1, x2 * y2]
    }
}

/// A selected setting together with the direction it stands for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub label: SettingLabel,
    pub direction: Direction,
}

/// One time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub slot: u64,
    /// Tally cell the slot was accumulated into.
    pub cell: usize,
    pub setting_a: Setting,
    pub setting_b: Setting,
    pub outcome_a: Outcome,
    pub outcome_b: Outcome,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hidden: Option<HiddenVariable>,
}

impl TrialRecord {
    pub fn both_detected(&self) -> bool {
        self.outcome_a.is_detected() && self.outcome_b.is_detected()
    }
}

/// Index of the tally cell for setting pair `(i, j)`.
pub fn pair_cell(a: SettingIndex, b: SettingIndex) -> usize {
    a.offset() * 2 + b.offset()
}

/// Inverse of [`pair_cell`].
pub fn cell_pair(cell: usize) -> (SettingIndex, SettingIndex) {
    assert!(cell < 4, "setting-pair cell {cell} out of range");
    (SettingIndex::BOTH[cell / 2], SettingIndex::BOTH[cell % 2])
}

/// How the cells of a [`Tally`] are keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeySpace {
    /// Four cells, one per setting pair `(i, j)`, in the order 11, 12, 21, 22.
    SettingPairs,
    /// One cell per angle of a grid.
    AngleGrid(usize),
}

impl KeySpace {
    pub fn len(&self) -> usize {
        match self {
            KeySpace::SettingPairs => 4,
            KeySpace::AngleGrid(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_name(&self, cell: usize) -> String {
        match self {
            KeySpace::SettingPairs => {
                let (a, b) = cell_pair(cell);
                format!("pair ({}, {})", a.number(), b.number())
            }
            KeySpace::AngleGrid(_) => format!("grid angle #{cell}"),
        }
    }
}

/// Counts for one cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairCounts {
    pub n_slots: u64,
    /// Slots in which both stations detected.
    pub n_detected_pairs: u64,
    /// Sum of `X Y` over every slot, zeros included.
    pub sum_product_all: i64,
    /// Sum of `X Y` over slots with `X != 0` and `Y != 0`.
    pub sum_product_detected: i64,
    pub n_detected_a: u64,
    pub n_detected_b: u64,
}

impl PairCounts {
    pub fn record(&mut self, x: Outcome, y: Outcome) {
        let product = (x.value() * y.value()) as i64;
        self.n_slots += 1;
        self.sum_product_all += product;
        if x.is_detected() {
            self.n_detected_a += 1;
        }
        if y.is_detected() {
            self.n_detected_b += 1;
        }
        if x.is_detected() && y.is_detected() {
            self.n_detected_pairs += 1;
            self.sum_product_detected += product;
        }
    }

    pub fn add(&mut self, other: &PairCounts) {
        self.n_slots += other.n_slots;
        self.n_detected_pairs += other.n_detected_pairs;
        self.sum_product_all += other.sum_product_all;
        self.sum_product_detected += other.sum_product_detected;
        self.n_detected_a += other.n_detected_a;
        self.n_detected_b += other.n_detected_b;
    }

    /// Checks the counting invariants of a cell.
    pub fn is_consistent(&self) -> bool {
        self.n_detected_pairs <= self.n_detected_a.min(self.n_detected_b)
            && self.n_detected_a.max(self.n_detected_b) <= self.n_slots
            && self.sum_product_detected.unsigned_abs() <= self.n_detected_pairs
            && self.sum_product_all.unsigned_abs() <= self.n_slots
    }
}

/// Mergeable per-cell counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    space: KeySpace,
    cells: Vec<PairCounts>,
}

impl Tally {
    pub fn empty(space: KeySpace) -> Self {
        Tally {
            space,
            cells: vec![PairCounts::default(); space.len()],
        }
    }

    pub fn from_cells(space: KeySpace, cells: Vec<PairCounts>) -> Result<Self> {
        if cells.len() != space.len() {
            return Err(Error::Structural(format!(
                "{} cells supplied for a key space of {}",
                cells.len(),
                space.len()
            )));
        }
        Ok(Tally { space, cells })
    }

    pub fn space(&self) -> KeySpace {
        self.space
    }

    pub fn cells(&self) -> &[PairCounts] {
        &self.cells
    }

    pub fn cell(&self, cell: usize) -> Result<&PairCounts> {
        self.cells
            .get(cell)
            .ok_or_else(|| Error::Structural(format!("cell {cell} outside a key space of {}", self.cells.len())))
    }

    pub fn record(&mut self, cell: usize, x: Outcome, y: Outcome) {
        self.cells[cell].record(x, y);
    }

    /// `M`: the number of slots over all cells.
    pub fn total_slots(&self) -> u64 {
        self.cells.iter().map(|c| c.n_slots).sum()
    }

    /// `sum(Ns)`: the number of detected pairs over all cells.
    pub fn total_detected_pairs(&self) -> u64 {
        self.cells.iter().map(|c| c.n_detected_pairs).sum()
    }

    /// Componentwise sum of two tallies over the same key space.
    pub fn merge(&self, other: &Tally) -> Result<Tally> {
        let mut out = self.clone();
        out.merge_in(other)?;
        Ok(out)
    }

    pub fn merge_in(&mut self, other: &Tally) -> Result<()> {
        if self.space != other.space {
            return Err(Error::Structural(format!(
                "cannot merge tallies over {:?} and {:?}",
                self.space, other.space
            )));
        }
        for (mine, theirs) in self.cells.iter_mut().zip(&other.cells) {
            mine.add(theirs);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(n: u64) -> PairCounts {
        PairCounts {
            n_slots: n,
            ..Default::default()
        }
    }

    #[test]
    fn merge_identities() {
        let empty = Tally::empty(KeySpace::SettingPairs);
        assert_eq!(empty.merge(&empty).unwrap(), empty);

        let mut t = Tally::empty(KeySpace::SettingPairs);
        t.record(0, Outcome::Plus, Outcome::Minus);
        t.record(3, Outcome::NoDetection, Outcome::Minus);
        assert_eq!(t.merge(&empty).unwrap(), t);
        assert_eq!(empty.merge(&t).unwrap(), t);
    }

    #[test]
    fn merge_adds_slots() {
        let mut cells = vec![PairCounts::default(); 4];
        cells[0] = counts(500);
        let t = Tally::from_cells(KeySpace::SettingPairs, cells).unwrap();
        let m = t.merge(&t).unwrap();
        assert_eq!(m.cells()[0].n_slots, 1000);
    }

    #[test]
    fn merge_rejects_mismatched_spaces() {
        let a = Tally::empty(KeySpace::SettingPairs);
        let b = Tally::empty(KeySpace::AngleGrid(4));
        assert!(matches!(a.merge(&b), Err(Error::Structural(_))));
        let c = Tally::empty(KeySpace::AngleGrid(5));
        assert!(matches!(b.merge(&c), Err(Error::Structural(_))));
    }

    #[test]
    fn record_keeps_invariants() {
        let mut c = PairCounts::default();
        let outs = [Outcome::Minus, Outcome::NoDetection, Outcome::Plus];
        for &x in &outs {
            for &y in &outs {
                c.record(x, y);
            }
        }
        assert_eq!(c.n_slots, 9);
        assert_eq!(c.n_detected_pairs, 4);
        assert_eq!(c.n_detected_a, 6);
        assert_eq!(c.sum_product_all, 0);
        assert_eq!(c.sum_product_all, c.sum_product_detected);
        assert!(c.is_consistent());
    }

    #[test]
    fn direction_checks_norm() {
        assert!(Direction::new(1.0, 0.0, 0.0).is_ok());
        assert!(Direction::new(1.0, 1e-5, 0.0).is_err());
        assert!(Direction::normalized([0.0, 0.0, 0.0]).is_err());
        let d = Direction::normalized([3.0, 4.0, 0.0]).unwrap();
        assert!((norm(&d.components()) - 1.0).abs() < UNIT_TOLERANCE);
        let p = Direction::planar(std::f64::consts::FRAC_PI_3);
        assert!((p.planar_angle() - std::f64::consts::FRAC_PI_3).abs() < 1e-15);
    }

    #[test]
    fn outcome_domain() {
        assert!(Outcome::from_value(2).is_err());
        assert_eq!(Outcome::sign_of(0.0), Outcome::Plus);
        assert_eq!(Outcome::sign_of(-0.0), Outcome::Plus);
        assert_eq!(Outcome::sign_of(-1e-300), Outcome::Minus);
        let json = serde_json::to_string(&Outcome::Minus).unwrap();
        assert_eq!(json, "-1");
        assert!(serde_json::from_str::<Outcome>("3").is_err());
    }

    #[test]
    fn pair_cells_roundtrip() {
        for cell in 0..4 {
            let (a, b) = cell_pair(cell);
            assert_eq!(pair_cell(a, b), cell);
        }
        assert_eq!(pair_cell(SettingIndex::Two, SettingIndex::One), 2);
    }

    fn arb_tally() -> impl Strategy<Value = Tally> {
        prop::collection::vec((0usize..4, -1i8..=1, -1i8..=1), 0..40).prop_map(|events| {
            let mut t = Tally::empty(KeySpace::SettingPairs);
            for (cell, x, y) in events {
                t.record(cell, Outcome::from_value(x).unwrap(), Outcome::from_value(y).unwrap());
            }
            t
        })
    }

    proptest! {
        #[test]
        fn merge_is_associative_and_commutative(a in arb_tally(), b in arb_tally(), c in arb_tally()) {
            let left = a.merge(&b).unwrap().merge(&c).unwrap();
            let right = a.merge(&b.merge(&c).unwrap()).unwrap();
            prop_assert_eq!(&left, &right);
            prop_assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
            prop_assert!(left.cells().iter().all(PairCounts::is_consistent));
        }
    }
}
