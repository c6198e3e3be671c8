//! `occverify`: command-line front end.
//!
//! Exit codes: 0 robust (or success), 1 not robust, 2 inconclusive,
//! 64 usage or input error, 70 failure during the run.

mod args;
mod bench;
mod commands;

use clap::Parser;
use tracing_subscriber::filter::LevelFilter;

use args::{Cli, Command};
use commands::EXIT_USAGE;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = match cli.verbose {
        0 => LevelFilter::WARN,
        1 => LevelFilter::INFO,
        _ => LevelFilter::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();

    let outcome = match &cli.command {
        Command::Verify(a) => commands::verify(a),
        Command::Occlude(a) => commands::occlude_cmd(a),
        Command::BuildOnn(a) => commands::build_onn_cmd(a),
        Command::EmitSmt(a) => commands::emit_smt_cmd(a),
        Command::Bench(a) => bench::bench(a),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            std::process::exit(f.code);
        }
    }
}
