//! CSV rows and JSON files written by the commands.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use belllab_core::engine::Geometry;
use belllab_core::stats::{correlation_full, correlation_postselected};
use belllab_core::types::cell_pair;
use belllab_core::Tally;
use serde::Serialize;

pub const CSV_HEADER: &str = "angle_rad,n_slots,n_detected,corr_full,se_full,corr_post,se_post,singlet_ref";

/// Formats `x` with 10 significant digits. Undefined values become an empty
/// field.
pub fn sig10(x: f64) -> String {
    if !x.is_finite() {
        return String::new();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.9e}");
    let (_, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig10).unwrap_or_default()
}

/// `A1B2`-style name of a setting pair.
pub fn pair_label(cell: usize) -> String {
    let (a, b) = cell_pair(cell);
    format!("A{}B{}", a.number(), b.number())
}

/// One CSV line per cell; setting-pair tables get a leading `pair` column.
pub fn results_csv(geometry: &Geometry, tally: &Tally) -> String {
    let pairs = matches!(geometry, Geometry::Chsh { .. });
    let mut out = String::new();
    if pairs {
        out.push_str("pair,");
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (cell, counts) in tally.cells().iter().enumerate() {
        let (a, b) = geometry.cell_settings(cell);
        let full = correlation_full(tally, cell).ok();
        let post = correlation_postselected(tally, cell).ok();
        let fields = [
            sig10(geometry.cell_angle(cell)),
            counts.n_slots.to_string(),
            counts.n_detected_pairs.to_string(),
            opt(full.map(|e| e.value)),
            opt(full.map(|e| e.se)),
            opt(post.map(|e| e.value)),
            opt(post.map(|e| e.se)),
            sig10(-a.direction.dot(&b.direction)),
        ];
        if pairs {
            out.push_str(&pair_label(cell));
            out.push(',');
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(dir, name, &text)
}
