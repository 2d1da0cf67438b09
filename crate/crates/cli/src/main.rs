//! `crowdnms`: suppression, evaluation, simulation and benchmarks over
//! paired full/visible detections.
//!
//! Every command echoes its effective configuration as a `# config: {...}`
//! line, on stdout and at the top of each file it writes. `crowdnms replay
//! <file>` re-runs the configuration found in such a header.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 bad data.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
