use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use predflow::harness::{exit_code, run_experiment, Command};

#[derive(Parser)]
#[command(name = "predflow", version, about = "Predictive coding / VAE experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Variational EM on the configured model and data.
    Train(RunArgs),
    /// Per-datum posterior inference with the configured engine.
    Infer(RunArgs),
    /// Fit ZCA or Cholesky whitening and render its filters.
    Whiten(RunArgs),
    /// Held-out ELBO of the oracle, pc, iterative and direct inference.
    CompareInference(RunArgs),
    /// Mean ELBO (and exact log marginal where available) per data split.
    EvalElbo(RunArgs),
    /// Write the configured dataset (and its generating model) to disk.
    GenData(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("PREDFLOW_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("PREDFLOW_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("PREDFLOW_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let (command, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Infer(a) => (Command::Infer, a),
        Cmd::Whiten(a) => (Command::Whiten, a),
        Cmd::CompareInference(a) => (Command::CompareInference, a),
        Cmd::EvalElbo(a) => (Command::EvalElbo, a),
        Cmd::GenData(a) => (Command::GenData, a),
    };
    match run_experiment(command, &args.config, args.seed, args.out) {
        Ok(report) => {
            for f in &report.files {
                println!("{}", report.out_dir.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
