use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use fastattn_cli::args::Cli;
use fastattn_cli::{run, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli).and_then(|outcome| {
        emit(&cli, &outcome.report)?;
        Ok(outcome.exit_code())
    }) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn emit(cli: &Cli, report: &str) -> Result<(), CliError> {
    match &cli.out {
        Some(path) => std::fs::write(path, report).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            // A closed pipe is not worth a nonzero exit.
            let _ = out.write_all(report.as_bytes()).and_then(|_| out.flush());
            Ok(())
        }
    }
}
