use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use lowmt::commands::{format_error, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => {
            let _ = out.flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = out.flush();
            eprintln!("{}", format_error(&e));
            ExitCode::FAILURE
        }
    }
}
