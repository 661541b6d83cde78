mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::UsageError;

#[derive(Parser, Debug)]
#[command(
    name = "spin-readout",
    version,
    about = "Gated and weighted readout of time-resolved photon traces"
)]
struct Cli {
    /// Worker threads for simulation and evaluation (0 = all cores). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate boundary and/or Rabi trace files.
    Simulate(commands::SimulateArgs),
    /// Sweep the gate width over two boundary traces.
    Sweep(commands::SweepArgs),
    /// Train a weighted readout model.
    Train(commands::TrainArgs),
    /// Fit a sinusoid to a gated Rabi dataset.
    FitRabi(commands::FitRabiArgs),
    /// Apply a model to traces.
    Predict(commands::PredictArgs),
    /// Compare gated and weighted readout on a test set.
    Evaluate(commands::EvaluateArgs),
    /// Gated and model populations side by side for a Rabi dataset.
    Repair(commands::RepairArgs),
}

fn long_version() -> String {
    let schemas: Vec<String> = spin_readout::io::SCHEMAS
        .iter()
        .map(|(name, v)| format!("{name} v{v}"))
        .collect();
    format!(
        "{}\nfile formats: {}",
        env!("CARGO_PKG_VERSION"),
        schemas.join(", ")
    )
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(long_version().into_boxed_str());
    let matches = match Cli::command().long_version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()?;
    }
    let cfg = match &cli.config {
        Some(path) => config::RunConfig::load(path).map_err(|e| UsageError(format!("{e:#}")))?,
        None => config::RunConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, &cfg),
        Command::Sweep(a) => commands::sweep(&a, &cfg),
        Command::Train(a) => commands::train(&a, &cfg),
        Command::FitRabi(a) => commands::fit_rabi(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a, &cfg),
        Command::Repair(a) => commands::repair(&a, &cfg),
    }
}
