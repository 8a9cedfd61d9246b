//! Config-driven sweeps: parse a spec, run every cell, write CSV, summarize.

pub mod config;
pub mod presets;
pub mod report;
pub mod sweep;

pub use config::{Cell, CellConfig, ExperimentSpec};
pub use presets::{preset, preset_toml, PRESET_NAMES};
pub use report::report;
pub use sweep::{run_sweep, ExperimentResult, Row, COLUMNS, METRICS};
