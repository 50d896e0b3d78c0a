mod bench;
mod config;
mod error;
mod report;
mod train;
mod verify;

use std::process::ExitCode;

use clap::Parser;

use config::{Args, Command, RunConfig};
use error::CliError;

fn run(args: &Args) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args)?;
    match cfg.command {
        Command::Train => train::run(&cfg),
        Command::Verify => verify::run(&cfg, args.inject_fault),
        Command::Report => report::run(&args.runs, &cfg.out),
        Command::Bench => bench::run(&cfg.out, args.max_modes, cfg.model.tt_bond, cfg.train.seed),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tnlayers: {e}");
            e.exit_code()
        }
    }
}
