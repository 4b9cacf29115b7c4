use clap::{Parser, Subcommand};
use dwmlab::cli::{load_config_value, run_command};
use std::path::PathBuf;
use std::process::ExitCode;

/// Offline model-based RL lab: generate datasets, train diffusion or
/// one-step world models, train offline agents against them, and sweep.
#[derive(Parser)]
#[command(name = "dwmlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to the JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory for artifacts and the echoed config.
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,

    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Config patches, `key=value` with dotted paths (repeatable).
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset from scripted policies.
    GenData,
    /// Train a world model (dwm or onestep) on a dataset.
    TrainWm,
    /// Measure world-model prediction error on held windows.
    EvalWm,
    /// Train an offline agent against a pretrained world model.
    TrainAgent,
    /// Evaluate a policy checkpoint on the real environment.
    EvalAgent,
    /// Train agents over a grid of simulation horizons.
    SweepHorizon,
    /// Train agents over a grid of evaluation returns.
    SweepRtg,
    /// Render a sweep CSV as a Markdown table.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainWm => "train-wm",
            Command::EvalWm => "eval-wm",
            Command::TrainAgent => "train-agent",
            Command::EvalAgent => "eval-agent",
            Command::SweepHorizon => "sweep-horizon",
            Command::SweepRtg => "sweep-rtg",
            Command::Report => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config.as_ref() else {
        eprintln!("error: --config is required");
        return ExitCode::from(1);
    };
    let doc = match load_config_value(config, &cli.overrides, cli.seed) {
        Ok(doc) => doc,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run_command(cli.command.name(), &doc, &cli.out_dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
