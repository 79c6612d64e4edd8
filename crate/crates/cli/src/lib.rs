//! Library surface of the `swapflow` CLI: scenario parsing and the
//! subcommand implementations, kept callable for integration tests.

pub mod commands;
pub mod error;
pub mod scenario;

pub use commands::{cmd_allreduce_bench, cmd_rewrite, cmd_run, cmd_train, Ctx};
pub use error::CliError;
pub use scenario::{GeneratorSpec, Scenario, TrainSpec};
