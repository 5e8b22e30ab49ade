//! `lenswipe`: synthesize, pretrain, train, infer, evaluate, benchmark, ablate.
//!
//! Exit codes: 0 success, 1 invalid configuration or inputs, 2 runtime
//! failure, 3 finished with some per-image failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lenswipe::Error;
use log::info;

use commands::{Outcome, OutputLock};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "lenswipe", version, about = "Raindrop removal for lens-contaminated images")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default runs/<command>-<seed>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Compute device; only `cpu` is available.
    #[arg(long, global = true)]
    device: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Start from these weights instead of a random initialisation.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Continue the run stored in the output directory.
    #[arg(long)]
    resume: bool,
    /// Architecture variant: G, G+E or G+E+A.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// VGG16 feature weights (safetensors) for the perceptual loss.
    #[arg(long)]
    perceptual_weights: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic raindrops onto a directory of clean images.
    Synthesize {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train on synthetic corruptions of clean images.
    Pretrain {
        /// Directory of clean images.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train on a paired corpus.
    Train {
        /// Paired corpus directory or dataset manifest.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Restore images with trained weights.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Image files or directories.
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Appended to each output file stem.
        #[arg(long)]
        suffix: Option<String>,
    },
    /// Score restorations against clean references (the input itself when no checkpoint is given).
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// train, val, test or all.
        #[arg(long)]
        split: Option<String>,
        /// Score the luma channel only.
        #[arg(long)]
        luma: bool,
    },
    /// Time single-image inference.
    Benchmark {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Train and score the G, G+E and G+E+A variants under one protocol.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        perceptual_weights: Option<PathBuf>,
        #[arg(long)]
        luma: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synthesize { .. } => "synthesize",
            Command::Pretrain { .. } => "pretrain",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Evaluate { .. } => "evaluate",
            Command::Benchmark { .. } => "benchmark",
            Command::Ablate { .. } => "ablate",
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn apply_train_args(cfg: &mut RunConfig, args: TrainArgs) -> bool {
    set_opt(&mut cfg.init, args.init);
    set_opt(&mut cfg.variant, args.variant);
    set(&mut cfg.train.max_epochs, args.epochs);
    set_opt(&mut cfg.perceptual.weights, args.perceptual_weights);
    args.resume
}

/// Applies flags on top of the config file; returns the resume switch.
fn merge(cfg: &mut RunConfig, common: Common, command: Command) -> bool {
    cfg.command = Some(command.name().into());
    set_opt(&mut cfg.seed, common.seed);
    set_opt(&mut cfg.out, common.out);
    set(&mut cfg.device, common.device);
    match command {
        Command::Synthesize { input } => set_opt(&mut cfg.data.input_dir, input),
        Command::Pretrain { clean, train } => {
            set_opt(&mut cfg.data.clean_dir, clean);
            return apply_train_args(cfg, train);
        }
        Command::Train { data, train } => {
            set_opt(&mut cfg.data.path, data);
            return apply_train_args(cfg, train);
        }
        Command::Infer {
            checkpoint,
            inputs,
            suffix,
        } => {
            set_opt(&mut cfg.checkpoint, checkpoint);
            if !inputs.is_empty() {
                cfg.infer.inputs = inputs;
            }
            set(&mut cfg.infer.suffix, suffix);
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            luma,
        } => {
            set_opt(&mut cfg.checkpoint, checkpoint);
            set_opt(&mut cfg.data.path, data);
            set(&mut cfg.data.eval_split, split);
            cfg.data.luma |= luma;
        }
        Command::Benchmark {
            checkpoint,
            variant,
            height,
            width,
            runs,
            warmup,
        } => {
            set_opt(&mut cfg.checkpoint, checkpoint);
            set_opt(&mut cfg.variant, variant);
            set(&mut cfg.benchmark.height, height);
            set(&mut cfg.benchmark.width, width);
            set(&mut cfg.benchmark.runs, runs);
            set(&mut cfg.benchmark.warmup, warmup);
        }
        Command::Ablate {
            data,
            epochs,
            perceptual_weights,
            luma,
        } => {
            set_opt(&mut cfg.data.path, data);
            set(&mut cfg.train.max_epochs, epochs);
            set_opt(&mut cfg.perceptual.weights, perceptual_weights);
            cfg.data.luma |= luma;
        }
    }
    false
}

fn run(cli: Cli) -> lenswipe::Result<Outcome> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let resume = merge(&mut cfg, cli.common, cli.command);
    cfg.resolve()?;
    let out = cfg.output_dir();
    cfg.out = Some(out.clone());
    let _lock = OutputLock::acquire(&out)?;
    cfg.write_snapshot(&out)?;
    info!("{} -> {}", cfg.command.as_deref().unwrap_or_default(), out.display());
    match cfg.command.as_deref() {
        Some("synthesize") => commands::synthesize(&cfg, &out),
        Some("pretrain") => commands::pretrain(&cfg, &out, resume),
        Some("train") => commands::train(&cfg, &out, resume),
        Some("infer") => commands::infer(&cfg, &out),
        Some("evaluate") => commands::evaluate_cmd(&cfg, &out),
        Some("benchmark") => commands::benchmark(&cfg, &out),
        _ => commands::ablate(&cfg, &out),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Incompatible { .. } | Error::Pairing { .. } | Error::Channel { .. } => 1,
        Error::Item { source, .. } => exit_code(source),
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial { failed, total }) => {
            eprintln!("error: {failed} of {total} images failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
