//! `saturn`: command-line client for the control plane's HTTP API.
//!
//! Exit status is 0 on success, 1 when the server rejects a request or
//! cannot be reached, and 2 for usage errors caught before any request.

mod cli;
mod client;
mod commands;
mod config;
mod error;
mod table;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use crate::cli::Cli;
use crate::client::Api;
use crate::config::CliConfig;
use crate::error::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = CliConfig::resolve(cli.url, cli.token, cli.output, cli.config.as_deref())?;
    let api = Api::new(config)?;
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    commands::run(&api, cli.command, &mut out, &mut err)?;
    out.flush()?;
    Ok(())
}
