mod error;
mod fit;
mod input;
mod report;
mod simulate;
mod transform;

use clap::{Parser, Subcommand};

/// Block structure detection for Kendall rank-correlation matrices.
#[derive(Debug, Parser)]
#[command(name = "blockcorr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a block structure from data and report the selection path.
    Fit(fit::FitArgs),
    /// Run a simulation study and write one JSON line per replicate.
    Simulate(simulate::SimulateArgs),
    /// Convert Kendall's tau to linear correlation and precision matrices.
    Transform(transform::TransformArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => fit::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Transform(a) => transform::run(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
