//! `segmap`: synthetic data, training, MC-dropout prediction, uncertainty
//! maps, curriculum plans, evaluation and result tables.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{out_dir, Overrides, RunConfig};
use segmap::Error;

#[derive(Parser)]
#[command(name = "segmap", version, about = "Uncertainty-aware tiled segmentation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sub-image side length d.
    #[arg(long, global = true)]
    tile_size: Option<usize>,
    /// Sliding-window step s used for prediction.
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// MC dropout samples T.
    #[arg(long, global = true)]
    mc_samples: Option<usize>,
    /// Uncertainty threshold H_T.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Total stages including the initial one.
    #[arg(long, global = true)]
    stages: Option<usize>,
    /// ce, dice, ss, ce+dice or uncertainty.
    #[arg(long, global = true)]
    loss: Option<String>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth,
    /// Train a model on one fold of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Predict one image: probability map, labels, uncertainty map, mask.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Uncertainty map and certainty mask of a stored probability map.
    Uncertainty {
        #[arg(long)]
        pmap: PathBuf,
    },
    /// Resampling plan of a stored uncertainty map.
    Plan {
        #[arg(long)]
        umap: PathBuf,
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long, default_value_t = 2)]
        stage: usize,
    },
    /// Curriculum stages on top of a trained model.
    Curriculum {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Reliability metrics of a model on a dataset split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: commands::Split,
    },
    /// Result table of one or more experiment run directories.
    Table {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
    },
    /// Cross-validated experiment of one method.
    Experiment {
        #[arg(long)]
        data: PathBuf,
        /// baseline, curriculum or method2.
        #[arg(long)]
        method: Option<String>,
    },
}

const EXIT_CONFIG: u8 = 3;
const EXIT_MISSING: u8 = 4;
const EXIT_CORRUPT: u8 = 5;
const EXIT_RUNTIME: u8 = 6;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Geometry(_) => EXIT_CONFIG,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
        Error::BadMagic { .. } | Error::Corrupt { .. } => EXIT_CORRUPT,
        _ => EXIT_RUNTIME,
    }
}

fn run(cli: Cli) -> segmap::Result<()> {
    let g = &cli.global;
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: g.seed,
        tile_size: g.tile_size,
        stride: g.stride,
        mc_samples: g.mc_samples,
        threshold: g.threshold,
        sigma: g.sigma,
        stages: g.stages,
        loss: g.loss.clone(),
        folds: g.folds,
        jobs: g.jobs,
    });
    if let Command::Experiment { method: Some(m), .. } = &cli.command {
        cfg.experiment.method = m.clone();
    }
    let out = out_dir(&g.out);
    match &cli.command {
        Command::Synth => {
            cfg.synth()?;
        }
        Command::Predict { .. } | Command::Evaluate { .. } | Command::Table { .. } => {}
        _ => cfg.validate()?,
    }
    match cli.command {
        Command::Synth => commands::synth(&cfg, &out),
        Command::Train { data, fold } => commands::train(&cfg, &data, fold, &out),
        Command::Predict { model, image } => commands::predict(&cfg, &model, &image, &out),
        Command::Uncertainty { pmap } => commands::uncertainty(&cfg, &pmap, &out),
        Command::Plan { umap, image_id, stage } => commands::plan(&cfg, &umap, image_id.as_deref(), stage, &out),
        Command::Curriculum { model, data, fold } => commands::curriculum(&cfg, &model, &data, fold, &out),
        Command::Evaluate { model, data, fold, split } => commands::evaluate(&cfg, &model, &data, fold, split, &out),
        Command::Table { runs } => commands::table(&runs),
        Command::Experiment { data, .. } => commands::experiment(&cfg, &data, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
