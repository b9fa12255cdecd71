use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use noiselab_cli::config::ExperimentConfig;
use noiselab_cli::experiments;

/// Desk-scale diffusion laboratory: train toy models, align initial noise
/// with forward-only guidance, sample, and evaluate.
#[derive(Parser)]
#[command(name = "noiselab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for seed fan-out.
    #[arg(long)]
    jobs: Option<usize>,
    /// Allow writing into a directory that already holds a run.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser or velocity model (config kind: train).
    Train(RunArgs),
    /// Refine initial noise and dump traces (config kind: align).
    Align(RunArgs),
    /// Generate samples, optionally from aligned noise (config kind: sample).
    Sample(RunArgs),
    /// Metric comparisons and application experiments (config kinds: eval,
    /// autoguide_*, dual_condition, cross_model, rescue_worst,
    /// baseline_best_of_n).
    Eval(RunArgs),
    /// Hyperparameter sweeps (config kinds: sweep_steps, sweep_guidance,
    /// sweep_noise_level).
    Sweep(RunArgs),
    /// Ablations (config kinds: ablate_normalization, ablate_clipping).
    Ablate(RunArgs),
    /// Re-run a manifest and verify the outputs are bit-identical.
    Reproduce {
        /// Manifest written by a previous run.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the replayed outputs (default: sibling of the
        /// original run).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

fn classify_error(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<noiselab_core::Error>() {
            return match core {
                noiselab_core::Error::Numerical { .. } | noiselab_core::Error::Training { .. } => {
                    EXIT_NUMERICAL
                }
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_CONFIG
}

fn run_command(args: &RunArgs, subcommand: &'static str) -> anyhow::Result<u8> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.kind.subcommand() != subcommand {
        anyhow::bail!(
            "config kind '{}' belongs to the '{}' subcommand",
            cfg.kind.name(),
            cfg.kind.subcommand()
        );
    }
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = jobs;
    }
    let result = experiments::run(&cfg, args.overwrite)?;
    eprintln!(
        "wrote {} file(s) to {}",
        result.outputs.len(),
        result.out_dir.display()
    );
    if result.partial_failures > 0 {
        eprintln!("{} batch item(s) failed", result.partial_failures);
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(a) => run_command(a, "train"),
        Command::Align(a) => run_command(a, "align"),
        Command::Sample(a) => run_command(a, "sample"),
        Command::Eval(a) => run_command(a, "eval"),
        Command::Sweep(a) => run_command(a, "sweep"),
        Command::Ablate(a) => run_command(a, "ablate"),
        Command::Reproduce { manifest, out } => {
            experiments::reproduce(manifest, out.as_deref()).map(|_| 0u8)
        }
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_error(&err))
        }
    }
}
