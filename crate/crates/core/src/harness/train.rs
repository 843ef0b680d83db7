use std::fmt::Write as _;

use super::config::RunConfig;
use super::graph::run_episode;
use super::model::ModelParams;
use super::{prepare_data, stream, Stream};
use crate::episodes::{sample_episode_grouped, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    /// Loss of every training episode, in order.
    pub losses: Vec<f64>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(out, "{i},{l:?}").expect("string write");
        }
        out
    }

    /// Mean loss over `range` of episodes (clipped to the log).
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let end = range.end.min(self.losses.len());
        let slice = self.losses.get(range.start..end)?;
        (!slice.is_empty()).then(|| slice.iter().sum::<f64>() / slice.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: TrainingLog,
}

/// Prepares the data, initializes parameters from the seed and trains on the
/// training split.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let data = prepare_data(config)?;
    let params = ModelParams::init(config, &mut stream(config, Stream::Init));
    train_on(config, &data.train, params)
}

/// Plain gradient descent on the episode loss, one episode per update.
pub fn train_on(config: &RunConfig, dataset: &Dataset, mut params: ModelParams) -> Result<TrainOutcome> {
    config.validate()?;
    params.check_against(config)?;
    let by_type = dataset.samples_by_type()?;
    let base = stream(config, Stream::Train);
    let mut log = TrainingLog::default();
    for k in 0..config.train_episodes {
        let mut rng = base.child(k as u64);
        let episode_seed = rng.seed();
        let abort = |message: String| Error::Training {
            episode_seed,
            step: k,
            message,
        };
        let episode = sample_episode_grouped(
            dataset,
            &by_type,
            config.n_way,
            config.m_shot,
            config.q_per_type,
            &mut rng,
        )?;
        let outcome =
            run_episode(&params, dataset, &episode, config, &mut rng, true, true).map_err(|e| abort(e.to_string()))?;
        if !outcome.loss.is_finite() {
            return Err(abort(format!("non-finite loss {}", outcome.loss)));
        }
        let grad = outcome.gradient.expect("requested");
        for (p, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
            p.axpy(-config.learning_rate, g)?;
        }
        if !params.is_finite() {
            return Err(abort("parameters became non-finite".into()));
        }
        log::debug!("episode {k}: loss {:.6}", outcome.loss);
        log.losses.push(outcome.loss);
    }
    Ok(TrainOutcome { params, log })
}
