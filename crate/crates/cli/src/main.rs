// NaN-rejecting comparisons are written as negations on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod output;
mod run;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    if let Some(dir) = &cli.global.examples {
        for path in ltv_core::catalog::write_all(dir)? {
            eprintln!("wrote {}", path.display());
        }
    }
    match &cli.command {
        Some(command) => {
            let result = run::run(&cli.global, command)?;
            let mut stdout = std::io::stdout().lock();
            // A closed pipe (e.g. `| head`) is not an error; the report is already on disk.
            match writeln!(stdout, "{}", serde_json::to_string_pretty(&result)?) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
        None if cli.global.examples.is_none() => anyhow::bail!("no subcommand given; see --help"),
        None => {}
    }
    Ok(())
}
