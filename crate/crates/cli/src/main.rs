//! `crlab`: experiment harness for the bounded-memory user-model
//! laboratory. Subcommands cover policy-bank training, behavior galleries,
//! online inference, temperature sweeps, assistance training/evaluation,
//! and the exact-posterior oracle suite. Every command is a deterministic
//! function of (config, seed): rerunning bit-reproduces all outputs.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "crlab", version, about = "Bounded-memory user model laboratory")]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the per-theta policy bank (skips when digests match).
    TrainBank,
    /// Greedy and temperature-sampled behavior galleries per theta.
    Gallery,
    /// Online (memory, theta) inference on simulated user streams.
    Infer,
    /// Repeat inference across the temperature grid plus the adaptive schedule.
    TauSweep,
    /// Train the assistance type-policy.
    AssistTrain,
    /// Evaluate assistance against the do-nothing baseline.
    AssistEval,
    /// Exact-posterior oracle consistency suite on micro models.
    OracleCheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainBank => "train-bank",
            Command::Gallery => "gallery",
            Command::Infer => "infer",
            Command::TauSweep => "tau-sweep",
            Command::AssistTrain => "assist-train",
            Command::AssistEval => "assist-eval",
            Command::OracleCheck => "oracle-check",
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = output::OutDir::new(&cli.out, cli.command.name(), cfg.digest(), cfg.seed)?;
    match cli.command {
        Command::TrainBank => commands::train_bank::run(&cfg, &out),
        Command::Gallery => commands::gallery::run(&cfg, &out),
        Command::Infer => commands::infer::run(&cfg, &out),
        Command::TauSweep => commands::tau_sweep::run(&cfg, &out),
        Command::AssistTrain => commands::assist::train(&cfg, &out),
        Command::AssistEval => commands::assist::eval(&cfg, &out),
        Command::OracleCheck => commands::oracle_check::run(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": format!("{err:#}"),
                "command": cli.command.name(),
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
