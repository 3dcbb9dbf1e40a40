//! Command-line surface of the forecasting pipeline.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use voyagecast::features::FeatureSet;
use voyagecast_nn::Ablation;

use crate::commands::Ctx;
use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "voyagecast",
    version,
    about = "Vessel trajectory forecasting pipeline"
)]
pub struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// standard, probabilistic or trigonometric.
    #[arg(long, global = true, value_parser = parse_feature_set)]
    pub feature_set: Option<FeatureSet>,
    /// c1 to c5.
    #[arg(long, global = true, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "voyagecast-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic fork-world corpus.
    Synth,
    /// Export the hexagonal grid as GeoJSON.
    Grid,
    /// Segment, clean, augment and split AIS messages into tracks.
    Ingest,
    /// Fit the route/destination probability store on training tracks.
    FitProb,
    /// Cut normalized input/target windows for every split.
    Featurize,
    /// Train the forecaster.
    Train,
    /// Forecast the test windows.
    Predict,
    /// Score a predictions file.
    Evaluate {
        /// Predictions file; defaults to the one for the configured model.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

fn parse_feature_set(s: &str) -> Result<FeatureSet, String> {
    s.parse().map_err(|e: voyagecast::Error| e.to_string())
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: voyagecast_nn::NnError| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    Usage(String),
    /// Failure while running a stage; exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

/// Effective configuration: file (or defaults) plus command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(CliError::Usage)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = cli.feature_set {
        cfg.feature_set = f;
    }
    if let Some(a) = cli.ablation {
        cfg.ablation = a;
    }
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

/// Runs one stage and returns its summary line.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let cfg = effective_config(&cli)?;
    let mut ctx = Ctx::new(cfg, &cli.out).map_err(CliError::Runtime)?;
    let result = match cli.command {
        Command::Synth => commands::synth(&mut ctx),
        Command::Grid => commands::grid(&mut ctx),
        Command::Ingest => commands::ingest(&mut ctx),
        Command::FitProb => commands::fit_prob(&mut ctx),
        Command::Featurize => commands::featurize(&mut ctx),
        Command::Train => commands::train_model(&mut ctx),
        Command::Predict => commands::predict(&mut ctx),
        Command::Evaluate { predictions } => commands::evaluate(&mut ctx, predictions),
    };
    result.map_err(CliError::Runtime)
}

/// Caps the global thread pool from `VOYAGECAST_THREADS`, if set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("VOYAGECAST_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "VOYAGECAST_THREADS must be a positive integer, got `{v}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.into()))
}
