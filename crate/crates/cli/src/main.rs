//! `trace`: synthesize benchmarks, build reasoning data, evaluate, test and
//! visualize from one binary.
//!
//! Every subcommand reads an optional TOML config (`--config`) whose
//! `[synth]`, `[build]`, `[eval]`, `[stats]`, `[viz]` and `[ablate]` tables
//! use the flag names as keys. Logs go to standard error as JSON lines; a
//! failure ends with one JSON error object there and a nonzero exit code.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cmd;
mod config;
mod endpoints;
mod error;
mod log;

use cmd::ablate::AblateOptions;
use cmd::build::BuildOptions;
use cmd::eval::EvalOptions;
use cmd::stats::StatsOptions;
use cmd::synth::SynthOptions;
use cmd::viz::VizOptions;
use config::ConfigFile;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "trace", version, about = "Chain-of-reasoning affordance data toolkit")]
pub struct Cli {
    /// TOML config file with one table per subcommand
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log level: error, warn, info, debug or trace [default: info]
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Synth(SynthOptions),
    Build(BuildOptions),
    Eval(EvalOptions),
    Stats(StatsOptions),
    Viz(VizOptions),
    Ablate(AblateOptions),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let level_name = match cli.log_level {
        Some(l) => Some(l),
        None => file.global::<String>("log-level")?,
    };
    let level = match level_name {
        Some(name) => log::parse_level(&name).ok_or_else(|| CliError::Config {
            message: format!("unknown log level {name:?}"),
            keys: vec!["log-level".into()],
        })?,
        None => tracing::Level::INFO,
    };
    log::init(level);
    match cli.command {
        Command::Synth(o) => cmd::synth::run(o.merge(file.section("synth")?)),
        Command::Build(o) => cmd::build::run(o.merge(file.section("build")?)),
        Command::Eval(o) => cmd::eval::run(o.merge(file.section("eval")?)),
        Command::Stats(o) => cmd::stats::run(o.merge(file.section("stats")?)),
        Command::Viz(o) => cmd::viz::run(o.merge(file.section("viz")?)),
        Command::Ablate(o) => cmd::ablate::run(o.merge(file.section("ablate")?)),
    }
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail(&CliError::Usage(e.to_string())),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
