//! Training loop, evaluation, metrics, persistence and configuration.

pub mod config;
mod eval;
mod gradcheck;
pub mod graph;
mod metrics;
pub mod model;
mod train;

use crate::episodes::{
    generate_synthetic, load_dataset, split_types, Dataset, DatasetPaths, SyntheticTruth, TypeSplit,
};
use crate::error::Result;
use crate::numerics::rng::RngState;

pub use config::{ConfigEcho, RunConfig, BENCHMARK_LEARNING_RATE};
pub use eval::{episode_posterior, evaluate, evaluate_episode, evaluate_on, EpisodeEval, EpisodePosterior};
pub use gradcheck::{
    episode_check, gradcheck, random_posterior_instance, CheckStatus, GradcheckEntry, GradcheckReport, TOLERANCE,
};
pub use metrics::{compute_metrics, Metrics, MetricsReport, TypeScores};
pub use model::{load_params, param_file_config, save_params, ModelParams};
pub use train::{train, train_on, TrainOutcome, TrainingLog};

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Split = 2,
    Train = 3,
    Eval = 4,
    Posterior = 5,
}

pub fn stream(config: &RunConfig, which: Stream) -> RngState {
    RngState::with_stream(config.seed, which as u64)
}

/// The full dataset and its type split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub full: Dataset,
    pub split: TypeSplit,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub truth: Option<SyntheticTruth>,
}

/// Loads `data_dir` or generates the synthetic benchmark, then splits by type.
pub fn prepare_data(config: &RunConfig) -> Result<PreparedData> {
    config.validate()?;
    let (full, truth) = match &config.data_dir {
        Some(dir) => (load_dataset(&DatasetPaths::in_dir(dir), config.mode)?, None),
        None => {
            let syn = generate_synthetic(&config.synthetic)?;
            (syn.dataset, Some(syn.truth))
        }
    };
    full.validate(config.mode)?;
    let split = split_types(&full, config.split, &mut stream(config, Stream::Split))?;
    Ok(PreparedData {
        train: full.restrict(&split.train)?,
        validation: full.restrict(&split.validation)?,
        test: full.restrict(&split.test)?,
        full,
        split,
        truth,
    })
}
