mod args;
mod commands;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// A problem with the command line or its inputs, reported with exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<ear_core::Error>() {
        Some(
            ear_core::Error::Invalid(_)
            | ear_core::Error::MissingAnswers(_)
            | ear_core::Error::MissingModel(_)
            | ear_core::Error::SchemaMismatch { .. },
        ) => 2,
        Some(ear_core::Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut cli = Cli::parse();
    if let Command::Train(t) = &mut cli.command {
        t.epochs
            .get_or_insert(ear_core::reranker::TrainConfig::for_variant(t.variant).epochs);
    }
    eprintln!("config: {}", serde_json::to_string(&cli).expect("config serializes"));

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
