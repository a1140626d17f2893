//! Command-line surface: train, encode, recommend, evaluate, bench, synth.
//!
//! Exit codes: 0 success, 2 usage/config errors, 3 runtime failures.

mod cmd;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "nodequant",
    version,
    about = "Graph node embeddings with learned 64-bit quantisation codes and table-based retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file and write a checkpoint.
    Train(cmd::train::Args),
    /// Export packed quantisation codes from a checkpoint.
    Encode(cmd::encode::Args),
    /// Query a code store for the most similar nodes.
    Recommend(cmd::recommend::Args),
    /// Run the evaluation protocols (link, class, path, ndcg).
    Evaluate(cmd::evaluate::Args),
    /// Compare table-lookup retrieval against float scanning.
    Bench(cmd::bench::Args),
    /// Generate a stochastic-block-model fixture graph.
    Synth(cmd::synth::Args),
}

fn classify(err: &anyhow::Error) -> u8 {
    use nodequant_core::Error as E;
    if let Some(core) = err.downcast_ref::<E>() {
        match core {
            E::Io { .. }
            | E::Parse { .. }
            | E::NodeOutOfBounds { .. }
            | E::Dim(_)
            | E::ConfigKey(_)
            | E::Config(_)
            | E::Format { .. }
            | E::Invalid(_) => 2,
            E::DegenerateGraph(_) | E::NonFiniteLoss(_) | E::Eval(_) => 3,
        }
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd::train::run(args),
        Command::Encode(args) => cmd::encode::run(args),
        Command::Recommend(args) => cmd::recommend::run(args),
        Command::Evaluate(args) => cmd::evaluate::run(args),
        Command::Bench(args) => cmd::bench::run(args),
        Command::Synth(args) => cmd::synth::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Shared flag type for `--set key=value` overrides.
#[derive(Clone, Debug)]
pub struct KeyValue(pub String);

impl std::str::FromStr for KeyValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains('=') {
            Ok(KeyValue(s.to_string()))
        } else {
            Err(format!("override `{s}` is not key=value"))
        }
    }
}

pub(crate) fn config_from(
    config: Option<&PathBuf>,
    sets: &[KeyValue],
) -> anyhow::Result<nodequant_core::config::Config> {
    let mut cfg = match config {
        Some(path) => nodequant_core::config::Config::from_file(path)?,
        None => nodequant_core::config::Config::new(),
    };
    for kv in sets {
        cfg.set_kv(&kv.0)?;
    }
    cfg.validate_keys()?;
    Ok(cfg)
}
