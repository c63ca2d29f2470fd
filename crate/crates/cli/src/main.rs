mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use tangram_core::harness::HarnessError;

use args::{Cli, Command};
use commands::Outcome;

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Refine(a) => commands::refine(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Report(a) => commands::report(a),
        Command::DumpTemplates(a) => commands::dump_templates(a),
    };
    match result {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::PartialFailures) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            let kind = match e.downcast_ref::<HarnessError>() {
                Some(h) if h.is_config_error() => "configuration error",
                _ => "error",
            };
            eprintln!("{kind}: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
