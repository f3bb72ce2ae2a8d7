use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fgs::experiment::{execute_stage, run_experiment, ExperimentConfig, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "fgs", version, about = "Frozen Gaussian sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment and write a result bundle.
    Run(Common),
    /// Draw the phase-space samples of the first cell.
    Sample(Common),
    /// Sample and propagate the trajectories.
    Propagate(Common),
    /// Reconstruct the wave field on the configured grid.
    Reconstruct(Common),
    /// Evaluate position and momentum expectations mesh-free.
    Observe(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    config: PathBuf,
    /// Overrides the config `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; replaced atomically.
    #[arg(long, default_value = "fgs-out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, args) = match cli.command {
        Command::Run(a) => (None, a),
        Command::Sample(a) => (Some(Stage::Sample), a),
        Command::Propagate(a) => (Some(Stage::Propagate), a),
        Command::Reconstruct(a) => (Some(Stage::Reconstruct), a),
        Command::Observe(a) => (Some(Stage::Observe), a),
    };
    let opts = RunOptions { seed: args.seed, threads: args.threads };
    let result = match stage {
        None => run_experiment(&args.config, &args.out, &opts).map(|o| {
            for r in &o.reports {
                println!("{:<28} {:<10} eps={:<8} M={:<6} {:.4e}", r.metric.name(), r.label, r.epsilon, r.samples, r.value);
            }
        }),
        Some(stage) => ExperimentConfig::load(&args.config)
            .and_then(|(cfg, text)| execute_stage(&cfg, &text, stage, &opts))
            .and_then(|bundle| bundle.write_atomic(&args.out)),
    };
    match result {
        Ok(()) => {
            eprintln!("wrote {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
