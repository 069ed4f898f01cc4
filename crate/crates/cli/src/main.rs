mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::FileConfig;

/// Bad flags or arguments detected after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: String) -> anyhow::Error {
    anyhow::Error::new(Usage(msg))
}

/// 2 usage, 3 data or format, 4 provider.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<hubgraph::Error>() {
            return match err {
                _ if err.is_provider() => 4,
                hubgraph::Error::InvalidArgument(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Build(a) => commands::build(a, file),
        Command::Search(a) => commands::search(a, file),
        Command::Add(a) => commands::add(a, file),
        Command::Delete(a) => commands::delete(a, file),
        Command::Drain(a) => commands::drain(a, file),
        Command::Eval(a) => commands::eval(a, file),
        Command::Compact(a) => commands::compact(a, file),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
