use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use kdmcse::cli::{run, Cli};
use kdmcse::Error;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let Error::GradCheckFailed { output, .. } = &e {
                print!("{output}");
            }
            let _ = std::io::stdout().flush();
            eprintln!(
                "error kind={} exit={} message={:?}",
                e.kind(),
                e.exit_code(),
                e.to_string()
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
