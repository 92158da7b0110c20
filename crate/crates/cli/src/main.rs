//! `kldpg`: corpus generation, pretraining, fine-tuning, evaluation, sampling
//! and reporting. Exit status is 0 on success, 2 for configuration errors and
//! 1 for failures while running.

mod commands;
mod config;
mod manifest;
mod report;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use std::path::PathBuf;
use std::process::ExitCode;

use config::{Settings, KEYS};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<kldpg_core::corpus::CorpusError> for CliError {
    fn from(e: kldpg_core::corpus::CorpusError) -> Self {
        match e {
            kldpg_core::corpus::CorpusError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<kldpg_core::policy::CheckpointError> for CliError {
    fn from(e: kldpg_core::policy::CheckpointError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<kldpg_core::policy::PolicyError> for CliError {
    fn from(e: kldpg_core::policy::PolicyError) -> Self {
        match e {
            kldpg_core::policy::PolicyError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<kldpg_core::tuning::TuneError> for CliError {
    fn from(e: kldpg_core::tuning::TuneError) -> Self {
        match e {
            kldpg_core::tuning::TuneError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<kldpg_core::ebm::EbmError> for CliError {
    fn from(e: kldpg_core::ebm::EbmError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<kldpg_core::lang::LangError> for CliError {
    fn from(e: kldpg_core::lang::LangError) -> Self {
        CliError::Config(e.to_string())
    }
}

const SUBCOMMANDS: &[(&str, &str)] = &[
    (
        "gen-corpus",
        "Generate a train/test corpus of MiniLang programs",
    ),
    ("train-base", "Pretrain the base model on a corpus (--data)"),
    (
        "tune",
        "Fine-tune a base model (--base, --data) with --method",
    ),
    (
        "evaluate",
        "Score a policy (--policy, default --base) against the base model",
    ),
    (
        "sample",
        "Draw programs from a policy, optionally after --prompt",
    ),
    (
        "enumerate-exact",
        "Compute Z and p exactly for a small configuration",
    ),
    ("report", "Summarize tuning traces into comparison tables"),
];

fn cli() -> Command {
    let mut cmd = Command::new("kldpg")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Constrain an autoregressive model to compilable MiniLang programs")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("PATH")
                .help("key = value settings file"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .global(true)
                .value_name("DIR")
                .help("output directory"),
        )
        .arg(
            Arg::new("force")
                .long("force")
                .global(true)
                .action(ArgAction::SetTrue)
                .help("replace a nonempty output directory"),
        );
    for key in KEYS {
        let mut arg = Arg::new(key.name)
            .long(key.name)
            .global(true)
            .value_name("VALUE")
            .help(format!("{} [default: {:?}]", key.help, key.default));
        if let Some(alias) = key.alias {
            arg = arg.visible_alias(alias);
        }
        if let Some(short) = key.short {
            arg = arg.short(short);
        }
        cmd = cmd.arg(arg);
    }
    for &(name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name).about(about);
        if name == "report" {
            sub = sub.arg(
                Arg::new("traces")
                    .num_args(1..)
                    .required(true)
                    .value_name("TRACE")
                    .help("trace.csv files or the tune output directories holding them"),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn settings(matches: &ArgMatches) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    if let Some(path) = matches.get_one::<String>("config") {
        s.apply_file(path.as_ref())?;
    }
    for key in KEYS {
        if matches.value_source(key.name) == Some(ValueSource::CommandLine) {
            let v = matches.get_one::<String>(key.name).expect("has value");
            s.set(key.name, v)?;
        }
    }
    Ok(s)
}

fn run() -> Result<(), CliError> {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let settings = settings(sub)?;
    let out: PathBuf = sub
        .get_one::<String>("out")
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Config("--out is required".into()))?;
    let force = sub.get_flag("force");
    let ctx = commands::Context::new(name, settings, &out, force)?;
    match name {
        "gen-corpus" => commands::gen_corpus(ctx),
        "train-base" => commands::train_base(ctx),
        "tune" => commands::tune(ctx),
        "evaluate" => commands::evaluate(ctx),
        "sample" => commands::sample(ctx),
        "enumerate-exact" => commands::enumerate_exact(ctx),
        "report" => {
            let traces: Vec<PathBuf> = sub
                .get_many::<String>("traces")
                .expect("required")
                .map(PathBuf::from)
                .collect();
            report::run(ctx, &traces)
        }
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kldpg: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
