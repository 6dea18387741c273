use std::process::ExitCode;

use clap::Parser;
use esilc_cli::commands::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("ESILC_LOG")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("esilc: {e}");
            e.exit_code()
        }
    }
}
