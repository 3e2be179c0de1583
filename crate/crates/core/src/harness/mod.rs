//! Experiment runners, configuration and reporting.

pub mod baselines;
pub mod config;
pub mod pipeline;
pub mod report;

pub use baselines::{run_contexteval, run_seqfinetune, ContextEvalReport};
pub use config::{preset, preset_names, EmbedderKind, RunConfig, Runner, TaskMetric};
pub use pipeline::{casa_restrict, run_casa_config, run_configured, run_rbaca, run_seed, Event, SeedRun};
pub use report::{Aggregate, MeanStd, RunReport, SeedReport};
