//! `laserpm` command-line driver.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_evaluate, cmd_generate, cmd_run_pipeline, cmd_simulate, cmd_train, cmd_tune_threshold,
    ModelKind,
};
pub use config::{RunConfig, TrainSource};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "laserpm", version, about = "Laser predictive-maintenance experiments")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a labeled aging corpus.
    Simulate {
        #[arg(long)]
        devices: Option<usize>,
    },
    /// Train one model and write its bundle and loss log.
    Train(TrainArgs),
    /// Draw synthetic windows from the trained GAN.
    Generate {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Pick the F1-optimal detection threshold and store it in the detector bundle.
    TuneThreshold {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Score all models on a held-out corpus.
    Evaluate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        no_ablation: bool,
        #[arg(long)]
        ablation_epochs: Option<usize>,
    },
    /// Stream a corpus through the monitoring pipeline.
    RunPipeline {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub kind: ModelKind,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training data for the forecaster, detector or RUL model.
    #[arg(long, value_enum)]
    pub source: Option<SourceArg>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_stats: bool,
    /// Drop anomalous traces from a simulator corpus before detector training.
    #[arg(long)]
    pub normal_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SourceArg {
    Gan,
    Simulator,
}

impl From<SourceArg> for TrainSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Gan => TrainSource::Gan,
            SourceArg::Simulator => TrainSource::Simulator,
        }
    }
}

/// Builds the resolved configuration for a parsed command line.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    match &cli.command {
        Command::Simulate { devices } => {
            if let Some(n) = devices {
                cfg.simulator.device_count = *n;
            }
        }
        Command::Train(a) => {
            if let Some(e) = a.epochs {
                if a.kind == ModelKind::Gan {
                    cfg.gan.epochs = e;
                } else {
                    cfg.train.epochs = e;
                }
            }
            if let Some(s) = a.source {
                if a.kind == ModelKind::Rul {
                    cfg.train.rul_source = s.into();
                } else {
                    cfg.train.source = s.into();
                }
            }
            if let Some(h) = a.horizon {
                cfg.train.horizon = h;
            }
            if let Some(w) = a.window {
                match a.kind {
                    ModelKind::Gan => cfg.gan.seq_len = w,
                    ModelKind::Forecaster => cfg.train.forecast_window = w,
                    ModelKind::Detector => cfg.train.detect_window = w,
                    ModelKind::Rul => cfg.train.rul_window = w,
                }
            }
            cfg.train.use_attention &= !a.no_attention;
            cfg.train.use_stats &= !a.no_stats;
            cfg.train.normal_only |= a.normal_only;
        }
        Command::Generate { n } => {
            if let Some(n) = n {
                cfg.generate.n = *n;
            }
        }
        Command::TuneThreshold { corpus, grid_points } => {
            if let Some(c) = corpus {
                cfg.threshold.corpus = Some(c.clone());
            }
            if let Some(g) = grid_points {
                cfg.threshold.grid_points = *g;
            }
        }
        Command::Evaluate {
            corpus,
            no_ablation,
            ablation_epochs,
        } => {
            if let Some(c) = corpus {
                cfg.evaluate.corpus = Some(c.clone());
            }
            cfg.evaluate.ablation &= !no_ablation;
            if let Some(e) = ablation_epochs {
                cfg.evaluate.ablation_epochs = *e;
            }
        }
        Command::RunPipeline { corpus, threshold } => {
            if let Some(c) = corpus {
                cfg.pipeline.corpus = Some(c.clone());
            }
            if threshold.is_some() {
                cfg.pipeline.threshold = *threshold;
            }
        }
    }
    Ok(cfg.resolve())
}

/// Parses arguments, runs the command and returns the text to print.
pub fn run<I, T>(args: I) -> CliResult<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    let cfg = resolve_config(&cli)?;
    Ok(match cli.command {
        Command::Simulate { .. } => cmd_simulate(&cfg)?.to_string(),
        Command::Train(a) => cmd_train(a.kind, &cfg)?.to_string(),
        Command::Generate { .. } => cmd_generate(&cfg)?.to_string(),
        Command::TuneThreshold { .. } => cmd_tune_threshold(&cfg)?.to_string(),
        Command::Evaluate { .. } => cmd_evaluate(&cfg)?.to_string(),
        Command::RunPipeline { .. } => cmd_run_pipeline(&cfg)?.to_string(),
    })
}
