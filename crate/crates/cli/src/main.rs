//! `hisq`: benchmarks, oracle verification, model queries and traces.
//!
//! Exit codes: 0 success, 1 usage error, 2 verification failure, 3 runtime
//! failure.

mod args;
mod bench;
mod common;
mod model;
mod trace;
mod verify;

use std::process::ExitCode;

use clap::Parser;

use args::{BenchCommand, Cli, Command};
use common::Failure;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(n)) => {
            eprintln!("verification failed: {n} check(s)");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if let Some(threads) = g.threads {
        if threads == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match &cli.command {
        Command::Bench(BenchCommand::Dslash) => bench::dslash(g),
        Command::Bench(BenchCommand::Cg(opts)) => bench::cg(g, opts),
        Command::Verify(opts) => verify::run(g, opts),
        Command::Model(cmd) => model::run(g, cmd),
        Command::Trace(opts) => trace::run(g, opts),
    }
}
