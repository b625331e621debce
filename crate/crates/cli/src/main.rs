use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sdisco", version, about = "Causally stable training with conditional distance correlation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate datasets from a JSON config.
    Gen {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train over the λ × bandwidth grid of a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Counterfactual sensitivity of checkpoints, or exact pathway analysis of a discrete model.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Naive full-reference estimator versus sDISCO.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "128,512,2048")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen { config } => sdisco_cli::cmd_gen(config).map(drop),
        Command::Train { config } => sdisco_cli::cmd_train(config).map(drop),
        Command::Analyze { config, checkpoint } => sdisco_cli::cmd_analyze(config, checkpoint).map(drop),
        Command::Bench { sizes, reps, out, seed } => sdisco_cli::cmd_bench(sizes, *reps, *seed, out.as_deref()).map(drop),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(sdisco_cli::exit_code(&e) as u8)
        }
    }
}
