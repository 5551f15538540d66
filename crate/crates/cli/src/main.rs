//! `sdvt`: dataset synthesis, training in every regime, distillation,
//! cascading, evaluation, benchmarking and figure-data export.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod args;
mod commands;
mod manifest;
mod settings;

use std::fmt;
use std::fs;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::Parser;
use sdvt_core::train::Regime;
use sdvt_core::Error;

use args::{Cli, Command};
use commands::Run;

/// A problem with the invocation rather than with data or numerics.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const THREADS_ENV: &str = "SDVT_THREADS";

fn threads(flag: Option<usize>) -> Result<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(UsageError("thread count must be at least 1".into()).into());
    }
    Ok(n)
}

fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let command = cli.command;
    let common = command.common();
    let config = common.config.as_deref().map(settings::read_config).transpose()?;
    let mut flags = command.flag_overrides();
    let fixed = match &command {
        Command::Distil { .. } => Some(Regime::SkinDistil),
        Command::Fcvit { .. } => Some(Regime::Fcvit),
        Command::Fcvitprobs { .. } => Some(Regime::Fcvitprobs),
        Command::Cascade { .. } => Some(Regime::CascadeStep),
        _ => None,
    };
    if let Some(r) = fixed {
        flags.insert("regime".into(), serde_json::to_value(r)?);
    }
    let settings = settings::resolve(config, flags)?;
    let out = common.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let run = Run { command: command.name(), argv, out, threads: threads(common.threads)?, settings };
    match command {
        Command::Synth { .. } => commands::synth(&run),
        Command::Train { .. } | Command::Fcvit { .. } | Command::Fcvitprobs { .. } => commands::train_regime(&run),
        Command::Distil { .. } => commands::distil(&run),
        Command::Cascade { .. } => commands::cascade(&run),
        Command::Eval { .. } => commands::eval(&run),
        Command::Bench { .. } => commands::bench(&run),
        Command::ExportAttn { .. } => commands::export_attn(&run),
        Command::ExportEmbed { .. } => commands::export_embed(&run),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidArgument(_)) => 1,
        Some(Error::NumericFailure(_) | Error::NumericInput(_) | Error::State(_)) => 3,
        Some(Error::Data(_) | Error::Format { .. } | Error::Io { .. }) => 2,
        None if err.downcast_ref::<serde_json::Error>().is_some() => 2,
        None if err.chain().any(|e| e.downcast_ref::<std::io::Error>().is_some()) => 2,
        None => 1,
    }
}

/// The error chain joined by ": ", skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !last.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        last = text;
    }
    out
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
