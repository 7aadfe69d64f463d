//! Library side of the `bfn` command-line tool: configuration parsing,
//! experiment orchestration and result serialization. The binary in
//! `main.rs` is a thin argument-parsing wrapper, so integration tests can
//! drive experiments through this crate directly.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod plot;

pub use config::{parse_config, parse_config_str, ExperimentConfig, ExperimentKind};
pub use error::{CliError, CliResult};
pub use experiments::{run_experiment, RunOptions, OUTPUT_ROOT_ENV};
pub use output::RunManifest;
pub use plot::{emit_plot_data, PlotSeries};
