use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::RunConfig;
use super::metrics::{compute_metrics, MetricsReport};
use super::model::ModelParams;
use super::{prepare_data, stream, Stream};
use crate::encoders::{encode_knowledge, encode_sample, MatchKind};
use crate::episodes::{sample_episode_grouped, Dataset, Episode};
use crate::error::{Error, Result};
use crate::numerics::linalg::Mat;
use crate::numerics::rng::RngState;
use crate::posterior::{mean_prototypes, predict, sample_posterior, Prediction, PrototypeChains};
use crate::prior::{build_prior, EncodedSupport, PriorSpec};

/// Outcome of one evaluation episode, labels as registry indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeEval {
    pub gold: Vec<usize>,
    pub predicted: Vec<usize>,
    pub predictions: Vec<Prediction>,
    /// Mean query log predictive probability of the gold label.
    pub log_likelihood: f64,
    /// Mean gate value of each episode type with its frame's match kind.
    pub lambdas: Vec<(MatchKind, f64)>,
}

fn encode_rows(dataset: &Dataset, ids: &[usize], params: &ModelParams, rng: &mut RngState) -> Result<Mat> {
    let rows = ids
        .iter()
        .map(|&i| encode_sample(&dataset.samples[i], &params.encoder, rng, false))
        .collect::<Result<Vec<_>>>()?;
    Mat::from_rows(&rows)
}

/// Encoded episode with its prior and prototype samples.
#[derive(Debug, Clone)]
pub struct EpisodePosterior {
    pub spec: PriorSpec,
    pub chains: PrototypeChains,
    pub query: Mat,
}

/// Encodes the episode, builds the prior and samples prototypes, all
/// without dropout. `proto` mode returns the support means as one chain.
pub fn episode_posterior(
    config: &RunConfig,
    params: &ModelParams,
    dataset: &Dataset,
    episode: &Episode,
    rng: &mut RngState,
) -> Result<EpisodePosterior> {
    let n = episode.n_way();
    let support = EncodedSupport::new(
        encode_rows(dataset, &episode.support, params, rng)?,
        episode.support_labels.clone(),
        n,
    )?;
    let query = encode_rows(dataset, &episode.query, params, rng)?;
    let knowledge = if config.mode.uses_knowledge() {
        let frames = episode
            .types
            .iter()
            .map(|&t| {
                let frame = dataset
                    .frame(t)
                    .ok_or_else(|| Error::Config(format!("type {} has no frame", dataset.type_registry[t])))?;
                encode_knowledge(frame, &params.encoder, rng, false)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(frames)
    } else {
        None
    };
    let spec = build_prior(&support, knowledge.as_deref(), &params.gate, config.mode)?;
    let chains = if config.mode.samples() {
        sample_posterior(&support, &spec, &config.sgld(), rng)?
    } else {
        mean_prototypes(&spec)?
    };
    Ok(EpisodePosterior { spec, chains, query })
}

/// Samples the posterior for one episode and predicts its queries.
pub fn evaluate_episode(
    config: &RunConfig,
    params: &ModelParams,
    dataset: &Dataset,
    episode: &Episode,
    rng: &mut RngState,
) -> Result<EpisodeEval> {
    let EpisodePosterior { spec, chains, query } = episode_posterior(config, params, dataset, episode, rng)?;
    let predictions = predict(&query, &chains)?;

    let log_likelihood = predictions
        .iter()
        .zip(&episode.query_labels)
        .map(|(p, &y)| p.probs[y].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / predictions.len().max(1) as f64;
    let lambdas = spec
        .types
        .iter()
        .zip(&episode.types)
        .filter_map(|(prior, &t)| {
            let gate = prior.gate.as_ref()?;
            let kind = dataset.match_kind(t)?;
            Some((kind, gate.iter().sum::<f64>() / gate.len() as f64))
        })
        .collect();
    Ok(EpisodeEval {
        gold: episode.query_labels.iter().map(|&l| episode.types[l]).collect(),
        predicted: predictions.iter().map(|p| episode.types[p.label]).collect(),
        predictions,
        log_likelihood,
        lambdas,
    })
}

/// Evaluates on the test split of the configured data.
pub fn evaluate(config: &RunConfig, params: &ModelParams) -> Result<MetricsReport> {
    let data = prepare_data(config)?;
    evaluate_on(config, params, &data.test)
}

/// Runs `eval_episodes` episodes over `dataset` (in parallel, each with its
/// own stream) and aggregates them in episode order.
pub fn evaluate_on(config: &RunConfig, params: &ModelParams, dataset: &Dataset) -> Result<MetricsReport> {
    config.validate()?;
    params.check_against(config)?;
    if config.eval_episodes == 0 {
        return Err(Error::Metrics("no evaluation episodes configured".into()));
    }
    let by_type = dataset.samples_by_type()?;
    let base = stream(config, Stream::Eval);
    let results = (0..config.eval_episodes)
        .into_par_iter()
        .map(|k| {
            let mut rng = base.child(k as u64);
            let episode = sample_episode_grouped(
                dataset,
                &by_type,
                config.n_way,
                config.m_shot,
                config.q_per_type,
                &mut rng,
            )?;
            evaluate_episode(config, params, dataset, &episode, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(usize, usize)> = results
        .iter()
        .flat_map(|r| r.gold.iter().copied().zip(r.predicted.iter().copied()))
        .collect();
    let metrics = compute_metrics(&pairs)?;
    let mut lambda_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (kind, v) in results.iter().flat_map(|r| r.lambdas.iter()) {
        let key = match kind {
            MatchKind::Exact => "exact",
            MatchKind::SuperOrdinate => "super_ordinate",
        };
        let e = lambda_sums.entry(key.to_string()).or_default();
        e.0 += v;
        e.1 += 1;
    }
    Ok(MetricsReport {
        mode: config.mode.to_string(),
        seed: config.seed,
        episodes: results.len(),
        queries: pairs.len(),
        accuracy: metrics.accuracy,
        micro_f1: metrics.micro_f1,
        macro_f1: metrics.macro_f1,
        mean_log_likelihood: results.iter().map(|r| r.log_likelihood).sum::<f64>() / results.len() as f64,
        mean_lambda: lambda_sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
        per_type: metrics
            .per_type
            .into_iter()
            .map(|(t, s)| (dataset.type_registry[t].clone(), s))
            .collect(),
        config: config.into(),
    })
}
