use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::str::FromStr;

use dermpipe_cli::config::{Overrides, PipelineConfig};
use dermpipe_cli::error::{CliError, Result};
use dermpipe_cli::{cmd_dry_run, cmd_reproduce, stages, ReproTarget};
use dermpipe_core::{Source, TaskId};

#[derive(Parser)]
#[command(
    name = "dermpipe",
    version,
    about = "Two-stage dermatoscopic lesion pipeline: segment, QC, preprocess, classify, evaluate"
)]
struct Cli {
    /// Run configuration file (TOML). Flags override config fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Classification task: melanocytic_vs_non, mel_vs_nv,
    /// benign_vs_malignant, cancer_vs_noncancer or seven_class.
    #[arg(long, global = true)]
    task: Option<String>,

    /// Output root directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Redo stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,

    /// Train this many folds concurrently (trades determinism for speed).
    #[arg(long, global = true, default_value_t = 1)]
    parallel_folds: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a dataset into a frozen manifest.
    Ingest {
        /// Directory holding the image files.
        #[arg(long)]
        root: Option<PathBuf>,
        /// Metadata CSV (needs an image_id column; dx optional).
        #[arg(long)]
        metadata: Option<PathBuf>,
        /// isic2018, ham10000 or custom.
        #[arg(long)]
        source: Option<String>,
    },
    /// Freeze a holdout split (no task / seven_class) or fold plan (binary tasks).
    Split {
        /// Train/val/test fractions, e.g. 0.70,0.13,0.17.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        /// Fold count for binary tasks.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train the lesion segmenter on the frozen segmentation split.
    TrainSeg,
    /// Generate masks for the classification source and apply QC.
    Segment,
    /// Build the preprocessed crop cache for the selected task.
    Preprocess,
    /// Fine-tune the classifier per fold (binary) or on the holdout split.
    TrainClf,
    /// Evaluate trained models and render the metric report.
    Evaluate,
    /// End-to-end driver for a named result table
    /// (table1, table4, table9, table10, table11).
    Reproduce { target: String },
    /// Run every stage on a bundled synthetic fixture (CPU, minutes).
    DryRun,
}

fn parse_source(s: &str) -> Result<Source> {
    match s.trim().to_ascii_lowercase().as_str() {
        "isic2018" => Ok(Source::Isic2018),
        "ham10000" => Ok(Source::Ham10000),
        "custom" => Ok(Source::Custom),
        other => Err(CliError::Config(format!(
            "unknown source `{other}` (expected isic2018, ham10000 or custom)"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let task = cli.task.as_deref().map(TaskId::from_str).transpose()?;
    let overrides = Overrides { seed: cli.seed, task, out: cli.out.clone() };
    let mut config = PipelineConfig::load(cli.config.as_deref(), &overrides)?;

    match cli.command {
        Command::Ingest { root, metadata, source } => {
            if let Some(root) = root {
                config.data.root = Some(root);
            }
            if let Some(metadata) = metadata {
                config.data.metadata = Some(metadata);
            }
            if let Some(source) = source {
                config.data.source = Some(parse_source(&source)?);
            }
            stages::cmd_ingest(&config, cli.force)?;
        }
        Command::Split { ratios, k } => {
            if let Some(ratios) = ratios {
                if ratios.len() != 3 {
                    return Err(CliError::Config("--ratios needs exactly three fractions".into()));
                }
                config.split.ratios = [ratios[0], ratios[1], ratios[2]];
            }
            if let Some(k) = k {
                config.split.k = k;
            }
            stages::cmd_split(&config, cli.force)?;
        }
        Command::TrainSeg => {
            stages::cmd_train_seg(&config, cli.force)?;
        }
        Command::Segment => {
            stages::cmd_segment(&config, cli.force)?;
        }
        Command::Preprocess => {
            stages::cmd_preprocess(&config, cli.force)?;
        }
        Command::TrainClf => {
            stages::cmd_train_clf(&config, cli.force, cli.parallel_folds.max(1))?;
        }
        Command::Evaluate => {
            stages::cmd_evaluate(&config, cli.force)?;
        }
        Command::Reproduce { target } => {
            let target = ReproTarget::from_str(&target)?;
            cmd_reproduce(&config, target, cli.force)?;
        }
        Command::DryRun => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("runs/dry_run"));
            cmd_dry_run(&out, cli.force)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
