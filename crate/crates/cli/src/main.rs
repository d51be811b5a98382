mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "xcnn", version, about = "Train and explain heatmap-generating CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing checkpoints and a metrics CSV.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Print test accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write input and heatmap image pairs for the first test images.
    Explain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Integer upscale factor for written images.
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// Draw boxes around the largest hot region and write them as CSV.
    Localize {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// Estimate label information in heatmap and input codes.
    Midiag {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cells per side of the binary code.
        #[arg(long, default_value_t = 4)]
        grid: usize,
    },
    /// Check every layer's gradient against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags that override the config file. Each maps to the config key of
/// the same name.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat key=value file applied before these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist | cifar10 | synthetic
    #[arg(long)]
    dataset: Option<String>,
    /// Dataset root (default: $XCNN_DATA_DIR, then ./data).
    #[arg(long)]
    data_dir: Option<String>,
    /// xcnn | baseline | xcnn_modified(C)
    #[arg(long)]
    model: Option<String>,
    /// mnist_cnn | vgg16 | vgg_lite | auto
    #[arg(long)]
    disc: Option<String>,
    /// Generator width, or auto.
    #[arg(long)]
    gen_channels: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    /// Comma-separated 0-based epochs that decay the learning rate.
    #[arg(long)]
    milestones: Option<String>,
    #[arg(long)]
    lr_gamma: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Training samples to keep (0 = all).
    #[arg(long)]
    subset: Option<String>,
    /// true | false
    #[arg(long)]
    stratified: Option<String>,
    /// true | false | auto
    #[arg(long)]
    augment: Option<String>,
    #[arg(long)]
    outdir: Option<String>,
    #[arg(long)]
    threads: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            cfg.apply_text(&text)?;
        }
        let flags = [
            ("dataset", &self.dataset),
            ("data_dir", &self.data_dir),
            ("model", &self.model),
            ("disc", &self.disc),
            ("gen_channels", &self.gen_channels),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("weight_decay", &self.weight_decay),
            ("milestones", &self.milestones),
            ("lr_gamma", &self.lr_gamma),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("seed", &self.seed),
            ("subset", &self.subset),
            ("stratified", &self.stratified),
            ("augment", &self.augment),
            ("outdir", &self.outdir),
            ("threads", &self.threads),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        if cfg.threads == 0 || cfg.batch_size == 0 {
            return Err("threads and batch_size must be positive".into());
        }
        Ok(cfg)
    }
}

pub enum Failure {
    /// Bad flags or config; exit 2.
    Usage(String),
    /// Anything that went wrong while running; exit 1.
    Run(String),
}

impl From<xcnn_core::XcnnError> for Failure {
    fn from(e: xcnn_core::XcnnError) -> Self {
        Failure::Run(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = |r: &RunArgs| r.resolve().map_err(Failure::Usage);
    match cli.command {
        Command::Train { run, resume } => commands::train(&cfg(&run)?, resume.as_deref()),
        Command::Eval { run, checkpoint } => commands::eval(&cfg(&run)?, &checkpoint),
        Command::Explain {
            run,
            checkpoint,
            count,
            scale,
        } => commands::explain(&cfg(&run)?, &checkpoint, count, scale.max(1)),
        Command::Localize {
            run,
            checkpoint,
            count,
            threshold,
            scale,
        } => commands::localize(&cfg(&run)?, &checkpoint, count, threshold, scale.max(1)),
        Command::Midiag { run, checkpoint, grid } => commands::midiag(&cfg(&run)?, &checkpoint, grid),
        Command::Gradcheck { rounds, seed } => commands::gradcheck(rounds, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
