//! Bell-CHSH experiments under local hidden-variable models.
//!
//! The crate simulates time-slot experiments for Pearle's detection-loophole
//! model and Bertlmann's socks, estimates correlations with and without
//! post-selection, audits the induced setting/hidden-variable dependence, and
//! checks the results against exact enumeration and deterministic quadrature.
//! A small message-passing harness runs the same models under an enforced
//! locality protocol.
//!
//! ```
//! use belllab_core::engine::{run_experiment, Geometry, RunConfig};
//! use belllab_core::stats::{chsh_all, CorrelationTable, Which};
//!
//! let mut config = RunConfig::new("pearle", Geometry::optimal_chsh(), 7);
//! config.slots = 20_000;
//! let tally = run_experiment(&config).unwrap().tally;
//! let table = CorrelationTable::from_tally(&tally);
//! let post = chsh_all(&table, Which::Postselected, 5.0).unwrap();
//! let full = chsh_all(&table, Which::Full, 5.0).unwrap();
//! assert!(post.max_statistic() > 2.5);
//! assert!(full.max_statistic() < 2.0);
//! ```

pub mod audit;
pub mod engine;
pub mod error;
pub mod models;
pub mod netharness;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    CounterfactualQuadruple, Direction, KeySpace, Outcome, PairCounts, Setting, SettingIndex, SettingLabel, Side,
    Tally, TrialRecord,
};
