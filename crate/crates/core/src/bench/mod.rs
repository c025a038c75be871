//! Evaluation harness: sequence loading, one-pass runs, metrics, the
//! re-run experiment, drift statistics, synthetic data and galleries.

pub mod cli;
pub mod dataset;
pub mod drift;
pub mod gallery;
pub mod metrics;
pub mod poc;
pub mod results;
pub mod runner;
pub mod synth;

pub use dataset::{load_otb_sequence, Sequence};
pub use drift::{drift_stats, DriftReport};
pub use gallery::dump_template_gallery;
pub use metrics::{precision_at, success_auc};
pub use poc::{poc_experiment, PocRecord};
pub use runner::{run_ope, run_ope_with, RunOptions, RunResult};
pub use synth::{drift_scenario, generate_synthetic, presets, suite, SyntheticSpec};
