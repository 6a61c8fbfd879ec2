//! Seeded Monte Carlo trial loop.
//!
//! Every slot is simulated in full, no-shows included. Conditioning on
//! detection is left to the estimators in [`crate::stats`].

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{model_by_name, LhvModel};
use crate::rng::{StreamFactory, StreamRole};
use crate::types::{pair_cell, Direction, KeySpace, Setting, SettingIndex, SettingLabel, Side, Tally, TrialRecord};

pub const DEFAULT_SLOTS: u64 = 1_000_000;

/// Slots handled by one work unit. Fixed so that results never depend on the
/// worker count.
const CHUNK: u64 = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettingsMode {
    /// Every setting pair (or grid angle) gets its own block of `slots` slots.
    FixedPairs,
    /// Each station tosses a coin per slot; `4 * slots` slots in total.
    RandomSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Geometry {
    /// Alice measures `alice[0]` or `alice[1]`, Bob `bob[0]` or `bob[1]`.
    Chsh { alice: [Direction; 2], bob: [Direction; 2] },
    /// Alice at angle 0, Bob at each grid angle in the plane.
    Grid { angles: Vec<f64> },
}

impl Geometry {
    /// CHSH geometry from four planar angles `a, a′, b, b′`.
    pub fn chsh_planar(angles: [f64; 4]) -> Self {
        Geometry::Chsh {
            alice: [Direction::planar(angles[0]), Direction::planar(angles[1])],
            bob: [Direction::planar(angles[2]), Direction::planar(angles[3])],
        }
    }

    /// The angles `a = 0, a′ = π/2, b = π/4, b′ = 3π/4`.
    pub fn optimal_chsh() -> Self {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        Geometry::chsh_planar([0.0, FRAC_PI_2, FRAC_PI_4, 3.0 * FRAC_PI_4])
    }

    pub fn key_space(&self) -> KeySpace {
        match self {
            Geometry::Chsh { .. } => KeySpace::SettingPairs,
            Geometry::Grid { angles } => KeySpace::AngleGrid(angles.len()),
        }
    }

    /// Settings of the two stations in `cell`.
    pub fn cell_settings(&self, cell: usize) -> (Setting, Setting) {
        match self {
            Geometry::Chsh { alice, bob } => {
                let (i, j) = crate::types::cell_pair(cell);
                (
                    Setting {
                        label: SettingLabel::new(Side::Alice, i),
                        direction: alice[i.offset()],
                    },
                    Setting {
                        label: SettingLabel::new(Side::Bob, j),
                        direction: bob[j.offset()],
                    },
                )
            }
            Geometry::Grid { angles } => (
                Setting {
                    label: SettingLabel::new(Side::Alice, SettingIndex::One),
                    direction: Direction::planar(0.0),
                },
                Setting {
                    label: SettingLabel::new(Side::Bob, SettingIndex::One),
                    direction: Direction::planar(angles[cell]),
                },
            ),
        }
    }

    /// Angle between the two stations' directions in `cell`.
    pub fn cell_angle(&self, cell: usize) -> f64 {
        match self {
            Geometry::Grid { angles } => angles[cell],
            Geometry::Chsh { .. } => {
                let (a, b) = self.cell_settings(cell);
                a.direction.dot(&b.direction).clamp(-1.0, 1.0).acos()
            }
        }
    }
}

/// Parses `start:end:count` with `pi` allowed in the bounds, e.g. `0:pi:13`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("grid `{text}` is not start:end:count")));
    }
    let start = parse_angle(parts[0])?;
    let end = parse_angle(parts[1])?;
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad grid count `{}`", parts[2])))?;
    if count == 0 {
        return Err(Error::Config("grid count must be at least 1".into()));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let step = (end - start) / (count - 1) as f64;
    Ok((0..count)
        .map(|k| if k == count - 1 { end } else { start + step * k as f64 })
        .collect())
}

/// Parses an angle in radians; accepts `pi`, `3pi/4`, `pi/2`, `2*pi`, `-pi/3`
/// and plain numbers.
pub fn parse_angle(text: &str) -> Result<f64> {
    let t = text.trim().to_ascii_lowercase();
    let bad = || Error::Config(format!("bad angle `{text}`"));
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.as_str()),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().map_err(|_| bad())?),
        None => (body, 1.0),
    };
    let coeff = match num.strip_suffix("pi") {
        Some("") => 1.0,
        Some(c) => c.trim_end_matches('*').parse::<f64>().map_err(|_| bad())?,
        None => return Err(bad()),
    };
    let v = coeff * std::f64::consts::PI / den;
    Ok(if neg { -v } else { v })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: String,
    /// Slots per setting pair (per grid angle in grid geometry).
    pub slots: u64,
    pub geometry: Geometry,
    pub seed: u64,
    /// Keep a [`TrialRecord`] with the hidden variable for every slot.
    pub audit_trace: bool,
    pub mode: SettingsMode,
    /// Worker cap; `None` uses the global pool.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(model: &str, geometry: Geometry, seed: u64) -> Self {
        RunConfig {
            model: model.to_string(),
            slots: DEFAULT_SLOTS,
            geometry,
            seed,
            audit_trace: false,
            mode: SettingsMode::FixedPairs,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::Config("slots must be at least 1".into()));
        }
        match &self.geometry {
            Geometry::Grid { angles } => {
                if angles.is_empty() {
                    return Err(Error::Config("angle grid is empty".into()));
                }
                if angles
                    .iter()
                    .any(|a| !a.is_finite() || *a < 0.0 || *a > std::f64::consts::PI)
                {
                    return Err(Error::Config("grid angles must lie in [0, π]".into()));
                }
                if angles.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("grid angles must be strictly increasing".into()));
                }
                if self.mode == SettingsMode::RandomSettings {
                    return Err(Error::Config("random settings need a CHSH geometry".into()));
                }
            }
            Geometry::Chsh { .. } => {}
        }
        Ok(())
    }

    /// Number of slots in the whole run.
    pub fn total_slots(&self) -> u64 {
        self.slots * self.geometry.key_space().len() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub tally: Tally,
    pub records: Option<Vec<TrialRecord>>,
}

pub fn run_experiment(config: &RunConfig) -> Result<RunOutput> {
    let model = model_by_name(&config.model)?;
    run_experiment_with(model.as_ref(), config)
}

/// Runs `config` with an explicit model instance; `config.model` is ignored.
pub fn run_experiment_with(model: &dyn LhvModel, config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let total = config.total_slots();
    let chunks: Vec<Range<u64>> = (0..total.div_ceil(CHUNK))
        .map(|k| k * CHUNK..((k + 1) * CHUNK).min(total))
        .collect();
    let work = || -> Result<Vec<RunOutput>> {
        chunks
            .par_iter()
            .map(|range| run_slots(model, config, range.clone()))
            .collect()
    };
    let parts = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut tally = Tally::empty(config.geometry.key_space());
    let mut records = config.audit_trace.then(|| Vec::with_capacity(total as usize));
    for part in parts {
        tally.merge_in(&part.tally)?;
        if let (Some(all), Some(mut chunk)) = (records.as_mut(), part.records) {
            all.append(&mut chunk);
        }
    }
    Ok(RunOutput { tally, records })
}

/// Simulates the slots in `range` of a run. Merging the outputs of a
/// partition of `0..config.total_slots()` reproduces [`run_experiment_with`].
pub fn run_slots(model: &dyn LhvModel, config: &RunConfig, range: Range<u64>) -> Result<RunOutput> {
    let streams = StreamFactory::new(config.seed);
    let space = config.geometry.key_space();
    let mut tally = Tally::empty(space);
    let mut records = config
        .audit_trace
        .then(|| Vec::with_capacity((range.end - range.start) as usize));
    let fixed: Vec<(Setting, Setting)> = (0..space.len()).map(|c| config.geometry.cell_settings(c)).collect();

    for slot in range {
        let cell = match config.mode {
            SettingsMode::FixedPairs => (slot / config.slots) as usize,
            SettingsMode::RandomSettings => {
                let a = SettingIndex::from_coin(streams.stream(slot, StreamRole::AliceCoin).gen());
                let b = SettingIndex::from_coin(streams.stream(slot, StreamRole::BobCoin).gen());
                pair_cell(a, b)
            }
        };
        let (sa, sb) = fixed[cell];
        let lambda = model.source_sample(&mut streams.stream(slot, StreamRole::Source));
        let x = model.station(Side::Alice, &sa.direction, &lambda)?;
        let y = model.station(Side::Bob, &sb.direction, &lambda)?;
        tally.record(cell, x, y);
        if let Some(r) = records.as_mut() {
            r.push(TrialRecord {
                slot,
                cell,
                setting_a: sa,
                setting_b: sb,
                outcome_a: x,
                outcome_b: y,
                hidden: Some(lambda),
            });
        }
    }
    Ok(RunOutput { tally, records })
}
