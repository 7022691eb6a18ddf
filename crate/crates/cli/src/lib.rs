//! Experiment front end: solver presets, run specs, result tables and a self-check suite.

pub mod checks;
pub mod experiment;
pub mod presets;
pub mod spec;

pub use experiment::{run_experiment, Summary, SummaryRow};
pub use fbe_core::io::{load_dataset, DataBundle, DataFormat};
pub use presets::{preset, PRESETS};
pub use spec::{RunSpec, StopRule};
