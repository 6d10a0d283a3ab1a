use std::process::ExitCode;

use clap::Parser;
use pcmf::cli::{exit_code, run, RunConfig};

fn main() -> ExitCode {
    let config = RunConfig::parse();
    let level = match config.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
