//! Command-line entry point. Exit codes: 0 success, 1 usage or
//! configuration error, 2 runtime failure.

mod cli;
mod config;
mod error;
mod eval;
mod export;
mod geomcheck;
mod manifest;
mod metrics;
mod train;

use clap::Parser;

use crate::cli::{Cli, Command};

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 2 for usage errors by convention; this binary
            // reserves 2 for runtime failures, so remap here.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => train::cmd_train(args),
        Command::Eval(args) => eval::cmd_eval(args),
        Command::Geomcheck(args) => geomcheck::cmd_geomcheck(args),
        Command::ExportPlots(args) => export::cmd_export(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
