//! Command-line front end: `usmae <command> [--config FILE] [--set KEY=VALUE]...`.
//!
//! Settings come from a flat TOML file, then `--set` overrides in order.
//! Failures print one line to stderr,
//! `error kind=<kind> code=<code> msg="<message>"`, and map to exit codes
//! 2 (configuration), 3 (data, i/o, checkpoint) and 4 (numerical abort).

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::execute;
pub use config::{apply_overrides, read_table, Command, RunConfig, ARCH_KEYS, KEYS, PATH_KEYS};

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "usmae", version, about = "Masked-autoencoder ViT pretraining and fine-tuning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Assign patients to train/val/test and write manifest.csv.
    Split(Common),
    /// Masked-reconstruction pretraining; writes pretrain.usfm and pretrain_log.csv.
    Pretrain(Common),
    /// Supervised fine-tuning; writes finetune_best.usfm, finetune_final.usfm and finetune_log.csv.
    Finetune(Common),
    /// Fine-tune over the lr × weight-decay grid; writes grid.csv and best.toml.
    Gridsearch(Common),
    /// Score a fine-tuned checkpoint; writes metrics, confusion and curve CSVs.
    Evaluate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file with flat `key = value` settings.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting; the value is parsed as TOML, else taken as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Do not echo per-epoch log rows to stderr.
    #[arg(long)]
    quiet: bool,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite(_) => 4,
        Error::Shape { .. }
        | Error::Validation(_)
        | Error::Ingest { .. }
        | Error::Checkpoint(_)
        | Error::Io { .. }
        | Error::Csv(_) => 3,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::NonFinite(_) => "numerical",
        Error::Shape { .. } => "shape",
        Error::Validation(_) => "validation",
        Error::Ingest { .. } => "ingest",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io { .. } => "io",
        Error::Csv(_) => "csv",
    }
}

/// The single stderr line reported for `e`.
pub fn error_line(e: &Error) -> String {
    format!("error kind={} code={} msg={:?}", kind(e), exit_code(e), e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error kind=usage code=2 msg={first:?}");
            return 2;
        }
    };
    let (command, common) = match cli.command {
        CliCommand::Split(c) => (Command::Split, c),
        CliCommand::Pretrain(c) => (Command::Pretrain, c),
        CliCommand::Finetune(c) => (Command::Finetune, c),
        CliCommand::Gridsearch(c) => (Command::Gridsearch, c),
        CliCommand::Evaluate(c) => (Command::Evaluate, c),
    };
    let result = (|| {
        let mut table = match &common.config {
            Some(path) => read_table(path)?,
            None => toml::Table::new(),
        };
        apply_overrides(&mut table, &common.set)?;
        let cfg = RunConfig::from_table(command, &table)?;
        execute(&cfg, !common.quiet)
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}
