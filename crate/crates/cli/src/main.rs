//! Batch entry points: `train`, `enhance`, `profile`, `probe-causality`.
//!
//! Every command is deterministic given its inputs, config and seed; outputs
//! are written atomically to explicitly named paths. `DENOISE_RUN_DIR` sets
//! the default run directory for training.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use denoise_core::checkpoint;
use denoise_core::enhance::enhance_waveform;
use denoise_core::metrics::causality_probe;
use denoise_core::model::{Model, ModelConfig, NAMED_CONFIGS};
use denoise_core::profile::complexity_report;
use denoise_core::train::{load_train_config, train, validate_data_paths};
use denoise_core::wav::{read_wav, write_wav};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "denoise",
    about = "Causal band-split dual-branch speech enhancement toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config file.
    Train(TrainArgs),
    /// Enhance a 16 kHz mono PCM WAV file with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Print parameter counts and MACs/s for named configurations.
    Profile(ProfileArgs),
    /// Verify that enhancement output never depends on future frames.
    ProbeCausality(ProbeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the training config (TOML).
    config: PathBuf,
    /// Resume from a trainer checkpoint (parameters, Adam moments and
    /// learning-rate schedule all continue).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the run directory (defaults to the config's `run.dir`, or
    /// `$DENOISE_RUN_DIR/<config-stem>` when that env var is set).
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Input WAV (PCM 16-bit mono 16 kHz).
    #[arg(long, short = 'i')]
    input: PathBuf,
    /// Output WAV path.
    #[arg(long, short = 'o')]
    output: PathBuf,
    /// Trained checkpoint.
    #[arg(long, short = 'c')]
    checkpoint: PathBuf,
    /// Debug: bypass the network and apply an identity mask (pure
    /// analysis/synthesis round trip).
    #[arg(long)]
    identity_mask: bool,
}

#[derive(Args)]
struct ProfileArgs {
    /// Configuration names ("64-4" ... "256-6"), or "all".
    names: Vec<String>,
    /// Verify the embedded parameter/MAC windows and ordering; nonzero exit
    /// on violation.
    #[arg(long)]
    check: bool,
    /// Emit comma-separated rows instead of the aligned table.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct ProbeArgs {
    /// Named configuration to probe (ignored when --checkpoint is given).
    #[arg(long, default_value = "64-4")]
    config: String,
    /// Probe a trained checkpoint instead of a seeded random model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Frames per probe input.
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum tolerated change in any past output frame.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Enhance(args) => cmd_enhance(args),
        Command::Profile(args) => cmd_profile(args),
        Command::ProbeCausality(args) => cmd_probe(args),
    }
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    require_file(&args.config, "config")?;
    let mut cfg = load_train_config(&args.config)?;
    // Precedence: --run-dir flag, then the config, then the env default.
    if let Some(dir) = args.run_dir {
        cfg.run.dir = Some(dir);
    } else if cfg.run.dir.is_none() {
        if let Ok(base) = std::env::var("DENOISE_RUN_DIR") {
            let stem = args.config.file_stem().map(|s| s.to_string_lossy().into_owned());
            cfg.run.dir = Some(PathBuf::from(base).join(stem.unwrap_or_else(|| "run".into())));
        }
    }
    if let Some(resume) = &args.resume {
        require_file(resume, "resume checkpoint")?;
    }
    validate_data_paths(&cfg)?;
    let run_dir = cfg.run.dir.clone().unwrap_or_default();
    println!("training {} steps into {}", cfg.optim.max_steps, run_dir.display());
    let report = train(&cfg, args.resume.as_deref())?;
    println!(
        "done: loss {:.4e} -> {:.4e} over {} steps",
        report.initial_loss, report.final_loss, report.steps_run
    );
    println!("best checkpoint: {}", report.best_checkpoint.display());
    println!("history: {}", report.history_path.display());
    Ok(())
}

fn cmd_enhance(args: EnhanceArgs) -> anyhow::Result<()> {
    require_file(&args.input, "input")?;
    require_file(&args.checkpoint, "checkpoint")?;
    let (model, _) = checkpoint::load_model(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let input = read_wav(&args.input)?;
    let output = enhance_waveform(&model, &input, args.identity_mask)?;
    write_wav(&args.output, &output)?;
    println!(
        "enhanced {} ({} samples) -> {}",
        args.input.display(),
        input.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_profile(args: ProfileArgs) -> anyhow::Result<()> {
    if args.names.is_empty() {
        bail!(
            "no configurations given; use `profile all` or any of: {}",
            NAMED_CONFIGS.join(", ")
        );
    }
    let names: Vec<String> = if args.names.len() == 1 && args.names[0] == "all" {
        NAMED_CONFIGS.iter().map(|s| s.to_string()).collect()
    } else {
        args.names.clone()
    };
    let report = complexity_report(&names)?;
    if args.csv {
        print!("{}", report.render_csv());
    } else {
        print!("{}", report.render_text());
        println!(
            "note: PESQ/STOI/ESTOI are standardized external metrics; use dedicated tools."
        );
    }
    if args.check {
        let failures = report.check();
        if !failures.is_empty() {
            for f in &failures {
                eprintln!("check failed: {f}");
            }
            std::process::exit(1);
        }
        println!("all complexity checks passed");
    }
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> anyhow::Result<()> {
    let model: Model = match &args.checkpoint {
        Some(path) => {
            require_file(path, "checkpoint")?;
            checkpoint::load_model(path)?.0
        }
        None => {
            let cfg = ModelConfig::named(&args.config)?;
            Model::new(&cfg, args.seed)?
        }
    };
    if args.frames < 2 {
        bail!("--frames must be at least 2");
    }
    let report = causality_probe(&model, args.trials, args.frames, args.seed);
    println!(
        "{} trials, {} frames: max past-frame violation {:.3e} (tolerance {:.1e})",
        report.trials, args.frames, report.max_violation, args.tolerance
    );
    if report.max_violation > args.tolerance {
        eprintln!("causality violated");
        std::process::exit(1);
    }
    println!("causal");
    Ok(())
}
