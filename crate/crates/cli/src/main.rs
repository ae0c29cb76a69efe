//! Batch CLI for the reservoir-computing denoiser.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on numeric or
//! runtime failures. `RC_DENOISE_THREADS` caps worker parallelism.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rc_denoise_core::experiment::pipeline::denoise_file;
use rc_denoise_core::experiment::studies::summarize;
use rc_denoise_core::experiment::{
    ekf_baseline, gain_matrix, generate_dataset, noise_color_study, parameter_sweep, run_pipeline,
    ExperimentConfig, Stage,
};
use rc_denoise_core::CoreError;

#[derive(Parser)]
#[command(
    name = "rc-denoise",
    version,
    about = "Reservoir-computing denoiser for nonlinear dynamics",
    propagate_version = true
)]
struct Cli {
    /// Maximum worker threads (RC_DENOISE_THREADS caps this further).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment configuration (JSON or TOML).
    #[arg(long)]
    config: PathBuf,

    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,

    /// Pipeline stage override (trained|tuned|truncated).
    #[arg(long)]
    stage: Option<String>,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Saved model file.
    #[arg(long)]
    model: PathBuf,

    /// Input series CSV (t plus the model's input channels).
    #[arg(long)]
    input: PathBuf,

    /// Ground-truth CSV for report metrics.
    #[arg(long)]
    truth: Option<PathBuf>,

    /// Where the denoised CSV is written.
    #[arg(long, default_value = "denoised.csv")]
    out: PathBuf,

    /// Optional JSON report path (requires --truth).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the clean trajectory and noisy variants as CSV files.
    Generate(RunArgs),
    /// Fit the fixed-baseline readout (stage `trained`).
    Train(RunArgs),
    /// Optimize hyperparameters, then fit (stage `tuned`).
    Tune(RunArgs),
    /// Truncate the saved tuned model (stage `truncated`).
    Prune(RunArgs),
    /// Apply a saved model to an input CSV.
    Denoise(DenoiseArgs),
    /// Extended Kalman filter baseline on the configured system.
    Ekf(RunArgs),
    /// Denoising-gain matrix over the train/test SNR grids.
    GainMatrix(RunArgs),
    /// Generalization sweep over the Prandtl parameter.
    Sweep(RunArgs),
    /// Noise-color comparison study.
    NoiseStudy(RunArgs),
    /// Aggregate stage reports into a summary table.
    Report(RunArgs),
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, CoreError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    config.validate()?;
    Ok(config)
}

fn stage_for(args: &RunArgs, default: Stage) -> Result<Stage, CoreError> {
    match &args.stage {
        Some(s) => s.parse(),
        None => Ok(default),
    }
}

fn run_stage(args: &RunArgs, default: Stage) -> Result<(), CoreError> {
    let config = load_config(args)?;
    let stage = stage_for(args, default)?;
    let outcome = run_pipeline(&config, stage)?;
    for r in &outcome.reports {
        println!(
            "{} snr {} seed {}: nmse {:.4e}, gain {:.3}, N {}, lambda {}",
            r.stage,
            r.snr,
            r.seed,
            r.nmse,
            r.denoising.denoising_gain,
            r.n_nodes,
            r.lambda.map(|l| format!("{l:.1e}")).unwrap_or_default(),
        );
    }
    for (snr, mean) in &outcome.mean_nmse {
        println!("{} snr {}: mean nmse {:.4e}", stage, snr, mean);
    }
    Ok(())
}

fn dispatch(command: &Command) -> Result<(), CoreError> {
    match command {
        Command::Generate(args) => {
            let config = load_config(args)?;
            let (layout, manifest) = generate_dataset(&config)?;
            println!(
                "wrote {} artifacts under {} (config {})",
                manifest.artifacts.len(),
                layout.data_dir().display(),
                &manifest.config_hash[..12]
            );
            Ok(())
        }
        Command::Train(args) => run_stage(args, Stage::Trained),
        Command::Tune(args) => run_stage(args, Stage::Tuned),
        Command::Prune(args) => run_stage(args, Stage::Truncated),
        Command::Denoise(args) => {
            let report = denoise_file(&args.model, &args.input, args.truth.as_deref(), &args.out)?;
            println!("wrote {}", args.out.display());
            if let Some(report) = report {
                println!(
                    "nmse {:.4e}, snr_test {:.3}, snr_reconstructed {:.3}, gain {:.3}",
                    report.nmse, report.snr_test, report.snr_reconstructed, report.denoising_gain
                );
                if let Some(path) = &args.report {
                    std::fs::write(
                        path,
                        serde_json::to_string_pretty(&report)
                            .map_err(|e| CoreError::Parse(e.to_string()))?,
                    )?;
                    println!("wrote {}", path.display());
                }
            } else if args.report.is_some() {
                return Err(CoreError::Config(
                    "--report requires --truth for ground-truth metrics".into(),
                ));
            }
            Ok(())
        }
        Command::Ekf(args) => {
            let config = load_config(args)?;
            let outcome = ekf_baseline(&config)?;
            for r in &outcome.reports {
                println!(
                    "ekf snr {} seed {}: nmse {:.4e}, gain {:.3}, q {:.1e}",
                    r.snr, r.seed, r.nmse, r.denoising.denoising_gain, r.q
                );
            }
            for (snr, mean) in &outcome.mean_nmse {
                println!("ekf snr {snr}: mean nmse {mean:.4e}");
            }
            Ok(())
        }
        Command::GainMatrix(args) => {
            let config = load_config(args)?;
            let outcome = gain_matrix(&config)?;
            println!("train\\test {:?}", outcome.test_levels);
            for (i, tr) in outcome.train_levels.iter().enumerate() {
                let row: Vec<String> = (0..outcome.test_levels.len())
                    .map(|j| format!("{:.3}", outcome.mean_gain[(i, j)]))
                    .collect();
                println!("{tr:>10} {}", row.join(" "));
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let config = load_config(args)?;
            let outcome = parameter_sweep(&config)?;
            for &sigma in &config.sweep.sigma_grid {
                for &snr in &config.sweep.snr_grid {
                    if let Some(g) = outcome.mean_gain(sigma, snr) {
                        println!("sigma {sigma} snr {snr}: mean gain {g:.3}");
                    }
                }
            }
            Ok(())
        }
        Command::NoiseStudy(args) => {
            let config = load_config(args)?;
            let outcome = noise_color_study(&config)?;
            for s in &outcome.summaries {
                println!(
                    "exponent {:+}: mean gain {:.3} (sd {:.3})",
                    s.exponent, s.mean_gain, s.std_gain
                );
            }
            Ok(())
        }
        Command::Report(args) => {
            let config = load_config(args)?;
            let table = summarize(&config)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn effective_threads(jobs: Option<usize>) -> Option<usize> {
    let env_cap = std::env::var("RC_DENOISE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0);
    match (jobs.filter(|n| *n > 0), env_cap) {
        (Some(j), Some(e)) => Some(j.min(e)),
        (Some(j), None) => Some(j),
        (None, Some(e)) => Some(e),
        (None, None) => None,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = effective_threads(cli.jobs) {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("rc-denoise: could not configure thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rc-denoise: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
