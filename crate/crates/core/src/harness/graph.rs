//! One training episode as a differentiable graph: encoders, prior, the
//! Langevin chain and the Monte Carlo query loss.

use crate::encoders::{dropout_mask, encode_knowledge_on, encode_sample_on, EncoderVars};
use crate::episodes::{Dataset, Episode};
use crate::error::{Error, Result};
use crate::numerics::linalg::Mat;
use crate::numerics::rng::RngState;
use crate::numerics::tape::{Tape, Var};
use crate::posterior::{literal_constant, CMode, ChainNoise};
use crate::prior::{gate_on, Mode};

use super::config::RunConfig;
use super::model::ModelParams;

#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub gate_weight: Var,
    pub gate_bias: Var,
}

impl ModelVars {
    /// Trainable handles, registered in [`ModelParams::tensors`] order.
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        ModelVars {
            encoder: EncoderVars::register(tape, &params.encoder),
            gate_weight: tape.param(params.gate.weight.clone()),
            gate_bias: tape.param(params.gate.bias.clone()),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        let mut v = self.encoder.all();
        v.push(self.gate_weight);
        v.push(self.gate_bias);
        v
    }
}

/// Nodes of a recorded episode.
#[derive(Debug, Clone)]
pub struct EpisodeGraph {
    /// Negative mean log predictive probability of the query labels.
    pub loss: Var,
    /// Final prototypes, one `N x d` node per chain.
    pub chains: Vec<Var>,
    /// Gate values per type (`d x 1`), `ake` only.
    pub lambdas: Vec<Var>,
    pub support: Var,
    pub query: Var,
}

fn one_hot(labels: &[usize], n: usize) -> Mat {
    let mut m = Mat::zeros(labels.len(), n);
    for (i, &l) in labels.iter().enumerate() {
        m.set(i, l, 1.0);
    }
    m
}

/// Row `t` holds `1/M_t` at the support rows of type `t`.
fn averaging(labels: &[usize], n: usize) -> Result<Mat> {
    let mut m = Mat::zeros(n, labels.len());
    for t in 0..n {
        let count = labels.iter().filter(|&&l| l == t).count();
        if count == 0 {
            return Err(Error::Episode(format!("no support samples for type index {t}")));
        }
        for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l == t) {
            m.set(t, i, 1.0 / count as f64);
        }
    }
    Ok(m)
}

fn rows_of(tape: &mut Tape, columns: &[Var]) -> Result<Var> {
    let rows: Vec<Var> = columns.iter().map(|&c| tape.transpose(c)).collect();
    tape.vconcat(&rows)
}

struct Prior {
    init: Var,
    mean: Option<Var>,
    lambda: Option<Var>,
    support_means: Var,
    knowledge: Option<Var>,
}

/// Records the episode. Randomness is drawn from `rng` in a fixed order:
/// dropout masks (support, query, frames) when `training`, then the
/// Langevin noise.
pub fn build_episode_graph(
    tape: &mut Tape,
    vars: &ModelVars,
    params: &ModelParams,
    dataset: &Dataset,
    episode: &Episode,
    config: &RunConfig,
    rng: &mut RngState,
    training: bool,
) -> Result<EpisodeGraph> {
    let n = episode.n_way();
    let d = config.d;
    let rate = params.encoder.dropout_rate;
    let mask = |rng: &mut RngState| training.then(|| dropout_mask(rng, d, rate));

    let encode = |tape: &mut Tape, rng: &mut RngState, ids: &[usize]| -> Result<Var> {
        let mut cols = Vec::with_capacity(ids.len());
        for &i in ids {
            let m = mask(rng);
            cols.push(encode_sample_on(
                tape,
                &vars.encoder,
                &dataset.samples[i],
                m.as_deref(),
            )?);
        }
        rows_of(tape, &cols)
    };
    let support = encode(tape, rng, &episode.support)?;
    let query = encode(tape, rng, &episode.query)?;

    let avg = tape.constant(averaging(&episode.support_labels, n)?);
    let support_means = tape.matmul(avg, support)?;
    let inv = 1.0 / episode.support.len() as f64;
    let ones = tape.constant(Mat::filled(1, episode.support.len(), inv));
    let global_row = tape.matmul(ones, support)?;
    let global_col = tape.transpose(global_row);
    let global = tape.repeat_rows(global_col, n)?;

    let mut lambdas = Vec::new();
    let prior = match config.mode {
        Mode::Ake | Mode::Kb => {
            let mut h_cols = Vec::with_capacity(n);
            for &t in &episode.types {
                let frame = dataset.frame(t).ok_or_else(|| {
                    Error::Config(format!(
                        "type {} has no frame; {} mode needs one",
                        dataset.type_registry[t], config.mode
                    ))
                })?;
                let m = mask(rng);
                h_cols.push(encode_knowledge_on(tape, &vars.encoder, frame, m.as_deref())?);
            }
            let knowledge = rows_of(tape, &h_cols)?;
            if config.mode == Mode::Ake {
                let (mut means, mut inits) = (Vec::new(), Vec::new());
                for (t, &h) in h_cols.iter().enumerate() {
                    let sel = tape.constant(one_hot(&[t], n));
                    let m_row = tape.matmul(sel, support_means)?;
                    let m = tape.transpose(m_row);
                    let diff = tape.sub(m, h)?;
                    let lambda = gate_on(tape, vars.gate_weight, vars.gate_bias, m, h)?;
                    let offset = tape.mul(lambda, diff)?;
                    means.push(tape.add(h, offset)?);
                    let mh = tape.add(m, h)?;
                    let init = tape.add(mh, offset)?;
                    inits.push(tape.sub(init, global_col)?);
                    lambdas.push(lambda);
                }
                Prior {
                    init: rows_of(tape, &inits)?,
                    mean: Some(rows_of(tape, &means)?),
                    lambda: Some(rows_of(tape, &lambdas)?),
                    support_means,
                    knowledge: Some(knowledge),
                }
            } else {
                let mh = tape.add(support_means, knowledge)?;
                Prior {
                    init: tape.sub(mh, global)?,
                    mean: Some(knowledge),
                    lambda: None,
                    support_means,
                    knowledge: Some(knowledge),
                }
            }
        }
        Mode::Ta | Mode::Proto => Prior {
            init: support_means,
            mean: None,
            lambda: None,
            support_means,
            knowledge: None,
        },
    };

    let chains = if config.mode.samples() {
        let sgld = config.sgld();
        sgld.validate()?;
        let noise = ChainNoise::draw(rng, &sgld, n, d);
        let y = tape.constant(one_hot(&episode.support_labels, n));
        let mut chains = Vec::with_capacity(noise.per_chain.len());
        for steps in &noise.per_chain {
            let mut v = prior.init;
            for (step, z) in steps.iter().enumerate() {
                if config.epsilon == 0.0 {
                    break;
                }
                let mut g = chain_gradient(tape, config, &prior, support, y, v)?;
                if !tape.value(g).is_finite() {
                    return Err(Error::Sampler {
                        step,
                        message: "non-finite posterior gradient".into(),
                    });
                }
                if !config.backprop_through_sampler {
                    g = tape.detach(g);
                }
                let drift = tape.scale(g, config.epsilon / 2.0);
                let noise = tape.constant(z.map(|x| x * config.epsilon.sqrt()));
                let moved = tape.add(v, drift)?;
                v = tape.add(moved, noise)?;
            }
            chains.push(v);
        }
        chains
    } else {
        vec![prior.init]
    };

    let mut picked = Vec::with_capacity(chains.len());
    for &v in &chains {
        let v_t = tape.transpose(v);
        let logits = tape.matmul(query, v_t)?;
        let log_probs = tape.log_softmax_rows(logits)?;
        picked.push(tape.gather(log_probs, episode.query_labels.clone())?);
    }
    let per_chain = tape.hconcat(&picked)?;
    let pooled = tape.log_sum_exp_rows(per_chain)?;
    let mean = tape.mean(pooled);
    let shifted = tape.scale(mean, -1.0);
    let log_n = tape.constant(Mat::scalar((chains.len() as f64).ln()));
    let loss = tape.add(shifted, log_n)?;

    Ok(EpisodeGraph {
        loss,
        chains,
        lambdas,
        support,
        query,
    })
}

/// Closed-form gradient of the support log-joint at `v`, on the tape.
fn chain_gradient(tape: &mut Tape, config: &RunConfig, prior: &Prior, support: Var, y: Var, v: Var) -> Result<Var> {
    let v_t = tape.transpose(v);
    let logits = tape.matmul(support, v_t)?;
    let p = tape.softmax_rows(logits)?;
    match config.c_mode {
        CMode::Exact => {
            let r = tape.sub(y, p)?;
            let r_t = tape.transpose(r);
            let g = tape.matmul(r_t, support)?;
            match prior.mean {
                Some(mu) => {
                    let pull = tape.sub(mu, v)?;
                    tape.add(g, pull)
                }
                None => Ok(g),
            }
        }
        CMode::PaperLiteral => {
            let yp = tape.mul(y, p)?;
            let r = tape.sub(y, yp)?;
            let r_t = tape.transpose(r);
            let g = tape.matmul(r_t, support)?;
            let c = literal_constant(config.d);
            let h = prior
                .knowledge
                .ok_or_else(|| Error::Config("literal gradient needs knowledge encodings".into()))?;
            let pull = match prior.lambda {
                Some(lambda) => {
                    let lm = tape.mul(lambda, prior.support_means)?;
                    let lh = tape.mul(lambda, h)?;
                    let kept = tape.sub(h, lh)?;
                    let back = tape.sub(kept, v)?;
                    tape.add(lm, back)?
                }
                None => tape.sub(h, v)?,
            };
            let pull = tape.scale(pull, c);
            tape.add(g, pull)
        }
    }
}

/// Loss value and, optionally, gradients for one episode.
pub struct EpisodeOutcome {
    pub loss: f64,
    pub gradient: Option<ModelParams>,
    pub chains: Vec<Mat>,
    pub lambdas: Vec<Vec<f64>>,
}

/// Records and evaluates one episode; with `differentiate`, also returns
/// `∂loss/∂params` shaped like `params`.
pub fn run_episode(
    params: &ModelParams,
    dataset: &Dataset,
    episode: &Episode,
    config: &RunConfig,
    rng: &mut RngState,
    training: bool,
    differentiate: bool,
) -> Result<EpisodeOutcome> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params);
    let graph = build_episode_graph(&mut tape, &vars, params, dataset, episode, config, rng, training)?;
    let loss = tape.scalar_value(graph.loss);
    let gradient = if differentiate {
        let grads = tape.backward(graph.loss)?;
        let mut g = params.clone();
        for (slot, var) in g.tensors_mut().into_iter().zip(vars.all()) {
            *slot = grads.wrt(var);
        }
        Some(g)
    } else {
        None
    };
    Ok(EpisodeOutcome {
        loss,
        gradient,
        chains: graph.chains.iter().map(|&c| tape.value(c).clone()).collect(),
        lambdas: graph
            .lambdas
            .iter()
            .map(|&l| tape.value(l).as_slice().to_vec())
            .collect(),
    })
}
