use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pacer::{CliError, Overrides, RunConfig};

/// Speculative decoding with adaptive draft lengths on toy models.
#[derive(Debug, Parser)]
#[command(name = "pacer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Train the toy target and draft language models.
    TrainLm,
    /// Collect labeled draft steps for pre-verifier training.
    GenData,
    /// Train the pre-verifier on a labeled dataset.
    TrainPv,
    /// Decode prompts and write per-step traces.
    Decode,
    /// Benchmark one policy with the cost model.
    Bench,
    /// Sweep fixed windows and, with a pre-verifier, the halting knobs.
    Sweep,
    /// Compare the maximum-acceptance oracle with the best fixed window.
    Oracle,
    /// Combine the CSV tables of an output directory.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::TrainLm => "train-lm",
            Command::GenData => "gen-data",
            Command::TrainPv => "train-pv",
            Command::Decode => "decode",
            Command::Bench => "bench",
            Command::Sweep => "sweep",
            Command::Oracle => "oracle",
            Command::Report => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let name = cli.command.name();
    let result = RunConfig::resolve(name, &cli.overrides).and_then(|cfg| {
        if cli.overrides.dump_config {
            print!("{}", cfg.to_toml()?);
            Ok(())
        } else {
            pacer::run(name, &cfg)
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pacer {name}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
