//! `hazn`: synthesize data, train the three stages, run the cascade,
//! evaluate, and compare against the baselines.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hazn_core::HaznError;

#[derive(Parser, Debug)]
#[command(name = "hazn", version, about = "Auto-zoom hierarchical part segmentation")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

/// Configuration layering shared by every subcommand: defaults, then the
/// config file, then `--set` lines, then `HAZN_SEED`, then `--seed`.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` setting; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of scenes.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory written by `synth`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = ["image", "object", "part"])]
        stage: String,
        /// Output directory for the model, loss curve and config.
        #[arg(long)]
        out: PathBuf,
        /// Directory holding earlier-stage models (defaults to `--out`).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Train on ground-truth regions without any earlier stage.
        #[arg(long)]
        gt_boxes: bool,
        /// Base learning rate for this stage.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Segment images with trained models.
    Infer {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding `image.model`, `object.model`, `part.model`.
        #[arg(long)]
        models: PathBuf,
        /// Image files or directories of images.
        #[arg(long, required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_object_scale: bool,
        #[arg(long)]
        no_part_scale: bool,
        /// Multi-scale averaging of the image-level scorer instead of the cascade.
        #[arg(long, conflicts_with_all = ["no_object_scale", "no_part_scale"])]
        baseline_msa: bool,
    },
    /// Score predicted label maps against a dataset.
    Eval {
        /// Directory of `pred_%05d.png` label maps.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory written by `synth`.
        #[arg(long)]
        gt: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        /// Method name for the CSV row.
        #[arg(long, default_value = "pred")]
        method: String,
    },
    /// Train (unless models are given) and evaluate every method.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Training dataset; generated from the seed when absent.
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// Test dataset; generated from the seed when absent.
        #[arg(long)]
        test_data: Option<PathBuf>,
        /// Use these models instead of training.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Train later stages on ground-truth regions only.
        #[arg(long)]
        gt_boxes: bool,
        /// Comma-separated subset of methods.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration: exit 2.
    Usage(String),
    /// Anything that fails while doing the work: exit 3.
    Runtime(HaznError),
}

impl From<HaznError> for CliError {
    fn from(e: HaznError) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j as usize).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(3);
        }
    }
    let r = match cli.command {
        Command::Synth { cfg, n, out } => commands::synth(&cfg, n as usize, &out),
        Command::Train {
            cfg,
            data,
            stage,
            out,
            models,
            gt_boxes,
            lr,
            iterations,
        } => commands::train(&commands::TrainArgs {
            cfg,
            data,
            stage,
            models: models.unwrap_or_else(|| out.clone()),
            out,
            gt_boxes,
            lr,
            iterations,
        }),
        Command::Infer {
            cfg,
            models,
            images,
            out,
            no_object_scale,
            no_part_scale,
            baseline_msa,
        } => commands::infer(&commands::InferArgs {
            cfg,
            models,
            images,
            out,
            object_scale: !no_object_scale,
            part_scale: !no_part_scale,
            baseline_msa,
        }),
        Command::Eval { pred, gt, out, method } => commands::eval(&pred, &gt, &out, &method),
        Command::Compare {
            cfg,
            out,
            train_data,
            test_data,
            models,
            gt_boxes,
            methods,
        } => commands::compare(&commands::CompareArgs {
            cfg,
            out,
            train_data,
            test_data,
            models,
            gt_boxes,
            methods,
        }),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
