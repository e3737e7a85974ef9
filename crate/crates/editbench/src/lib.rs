//! Command-line pipeline around `editbench-core`: generate the graph, model
//! and datasets, score editors on every split, plot label distributions and
//! collect the tables.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

pub use artifacts::{Layout, Split};
pub use commands::{cmd_eval, cmd_gen, cmd_plot, cmd_report, plot_data, score_split, GenSummary};
pub use config::ExperimentConfig;
pub use error::{RunError, RunResult};
pub use manifest::RunManifest;
