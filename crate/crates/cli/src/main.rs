use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

use commands::{CliError, Context};

/// Self-supervised one-shot segmentation on a synthetic multi-scale generator.
#[derive(Debug, Parser)]
#[command(name = "hfcseg", version)]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory; beats HFCSEG_WORKDIR and `paths.workdir`.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render samples with ground-truth masks and latents.
    Gen {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the projection head and prototypes; writes the SwAV checkpoint.
    TrainSwav,
    /// Train the segmenter from one annotated sample.
    TrainSeg {
        /// Sample stem (`<stem>.latents`, `<stem>.pgm`, `<stem>.labels`).
        #[arg(long)]
        sample: Option<PathBuf>,
    },
    /// Generate fresh images and segment them.
    Infer {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score the trained segmenter on the test set.
    Eval {
        /// Segmenter checkpoint; defaults to `paths.segmenter`.
        #[arg(long)]
        segmenter: Option<PathBuf>,
    },
    /// K-means pseudo-label baseline: fit, train, evaluate.
    BaselineKmeans,
    /// Sweep one config key; one CSV row per value.
    Ablate {
        key: String,
        /// Comma-separated values.
        values: String,
    },
    /// IoU-vs-PD curve of the trained segmenter.
    Curves {
        #[arg(long)]
        segmenter: Option<PathBuf>,
    },
    /// Print the effective config.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Context::load(
        cli.config.as_deref(),
        std::env::var_os(commands::WORKDIR_ENV).map(PathBuf::from),
        cli.workdir,
        &cli.overrides,
    )?;
    match cli.command {
        Command::Gen { n, seed } => commands::gen(&ctx, n, seed),
        Command::TrainSwav => commands::train_swav(&ctx),
        Command::TrainSeg { sample } => commands::train_seg(&ctx, sample.as_deref()),
        Command::Infer { n, seed } => commands::infer(&ctx, n, seed),
        Command::Eval { segmenter } => commands::eval(&ctx, segmenter.as_deref()),
        Command::BaselineKmeans => commands::baseline_kmeans(&ctx),
        Command::Ablate { key, values } => commands::ablate(&ctx, &key, &values),
        Command::Curves { segmenter } => commands::curves(&ctx, segmenter.as_deref()),
        Command::Config => {
            print!("{}", ctx.cfg.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status())
        }
    }
}
