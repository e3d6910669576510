//! End-to-end benchmark: task definitions, run configuration, training and
//! scoring of every method, result files and the invariant suites.

pub mod config;
pub mod results;
pub mod run;
pub mod store;
pub mod task;
pub mod verify;

pub use config::{ModelConfig, RunConfig};
pub use results::{write_outputs, ResultRow, ResultsTable, RunManifest, Timing};
pub use run::{evaluate_all, predict, run_benchmark, run_task, train_all, train_family, BenchmarkRun, FamilyModels, Method};
pub use store::{load_models, save_models};
pub use task::TaskSpec;
