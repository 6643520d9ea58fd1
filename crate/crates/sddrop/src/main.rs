use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sddrop::commands;
use sddrop::config::load_config;

/// Self-knowledge distillation via dropout sampling: train, evaluate, and
/// analyze small classifiers from one config file.
#[derive(Parser)]
#[command(name = "sddrop", version, about)]
struct Cli {
    /// TOML config file; every field has a default, so it may be omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes the epoch CSV and checkpoints.
    Train { overrides: Vec<String> },
    /// Accuracy, calibration error, and reliability diagram data.
    Eval { overrides: Vec<String> },
    /// Assumption statistics and gradient-direction report on a checkpoint.
    KlAnalyze { overrides: Vec<String> },
    /// Clean vs attacked accuracy under the one-step sign attack.
    Attack { overrides: Vec<String> },
    /// Accuracy across corruption kinds and severities.
    CorruptEval { overrides: Vec<String> },
    /// Out-of-distribution detection metrics via the perturbed-softmax
    /// detector.
    Ood { overrides: Vec<String> },
    /// Multi-seed comparison of cross-entropy vs the dropout-pair loss in
    /// each flow direction.
    Report { overrides: Vec<String> },
}

type CommandFn = fn(&sddrop::config::RunConfig) -> sddrop::Result<()>;

fn run(cli: &Cli) -> sddrop::Result<()> {
    let (overrides, action): (&[String], CommandFn) = match &cli.command {
        Command::Train { overrides } => (overrides, commands::run_train),
        Command::Eval { overrides } => (overrides, commands::run_eval),
        Command::KlAnalyze { overrides } => (overrides, commands::run_kl_analyze),
        Command::Attack { overrides } => (overrides, commands::run_attack),
        Command::CorruptEval { overrides } => (overrides, commands::run_corrupt_eval),
        Command::Ood { overrides } => (overrides, commands::run_ood),
        Command::Report { overrides } => (overrides, commands::run_report),
    };
    let config = load_config(cli.config.as_deref(), overrides)?;
    action(&config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code(&err) as u8)
        }
    }
}
