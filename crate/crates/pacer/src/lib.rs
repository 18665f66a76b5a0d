//! File formats, corpora, reports and the `pacer` command-line driver
//! around [`pacer_core`].
//!
//! Every subcommand reads a [`config::RunConfig`] resolved from defaults,
//! an optional TOML file and flags, and writes its outputs together with a
//! `manifest.json` into the output directory.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};

/// Subcommand names, in the order shown by `--help`.
pub const COMMANDS: [&str; 8] = ["train-lm", "gen-data", "train-pv", "decode", "bench", "sweep", "oracle", "report"];

/// Runs subcommand `name` with a resolved configuration.
pub fn run(name: &str, cfg: &RunConfig) -> CliResult<()> {
    match name {
        "train-lm" => commands::cmd_train_lm(cfg),
        "gen-data" => commands::cmd_gen_data(cfg),
        "train-pv" => commands::cmd_train_pv(cfg),
        "decode" => commands::cmd_decode(cfg),
        "bench" => commands::cmd_bench(cfg),
        "sweep" => commands::cmd_sweep(cfg),
        "oracle" => commands::cmd_oracle(cfg),
        "report" => commands::cmd_report(cfg),
        other => Err(CliError::config(format!("unknown command {other}"))),
    }
}
