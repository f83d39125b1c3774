use std::process::ExitCode;

use clap::Parser;
use otflow::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("otflow: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
