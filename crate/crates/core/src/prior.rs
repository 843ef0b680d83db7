//! Knowledge-based Gaussian prior over type prototypes.
//!
//! The prior mean for type `t` interpolates between the knowledge encoding
//! `h_t` and the support mean `m_t` through an elementwise gate `λ_t`:
//! `h_t + λ_t ⊙ (m_t - h_t)`. Covariance is the identity throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::functions::{gaussian_log_density, sigmoid_scalar};
use crate::numerics::linalg::{self, Mat};
use crate::numerics::rng::RngState;
use crate::numerics::tape::{Tape, Var};

/// Gate outputs are kept inside `[GATE_FLOOR, 1 - GATE_FLOOR]`.
pub const GATE_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Knowledge prior with the learned adaptive offset.
    Ake,
    /// Knowledge prior without adaptation.
    Kb,
    /// No knowledge; likelihood-only Langevin sampling.
    Ta,
    /// No knowledge, no sampling: support means are the prototypes.
    Proto,
}

impl Mode {
    pub fn uses_knowledge(self) -> bool {
        matches!(self, Mode::Ake | Mode::Kb)
    }

    pub fn samples(self) -> bool {
        !matches!(self, Mode::Proto)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ake => "ake",
            Mode::Kb => "kb",
            Mode::Ta => "ta",
            Mode::Proto => "proto",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ake" => Ok(Mode::Ake),
            "kb" => Ok(Mode::Kb),
            "ta" => Ok(Mode::Ta),
            "proto" => Ok(Mode::Proto),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected ake, kb, ta or proto)"
            ))),
        }
    }
}

/// `λ_t = σ(W [m_t; m_t - h_t; h_t] + b)`, shared across types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// `d x 3d`.
    pub weight: Mat,
    /// `d x 1`.
    pub bias: Mat,
}

impl GateParams {
    pub fn zeros(d: usize) -> Self {
        GateParams {
            weight: Mat::zeros(d, 3 * d),
            bias: Mat::zeros(d, 1),
        }
    }

    /// Small uniform weights, zero bias (so every gate starts near 0.5).
    pub fn init(d: usize, rng: &mut RngState) -> Self {
        let bound = (6.0 / (4 * d) as f64).sqrt();
        let data = (0..3 * d * d).map(|_| rng.uniform_range(-bound, bound)).collect();
        GateParams {
            weight: Mat::from_vec(d, 3 * d, data).expect("shape"),
            bias: Mat::zeros(d, 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        self.weight.expect_shape((d, 3 * d))?;
        self.bias.expect_shape((d, 1))
    }
}

/// Encoded support set: one row per sample and the episode-local type index
/// of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSupport {
    pub encodings: Mat,
    pub labels: Vec<usize>,
    pub n_types: usize,
}

impl EncodedSupport {
    pub fn new(encodings: Mat, labels: Vec<usize>, n_types: usize) -> Result<Self> {
        if encodings.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} encodings for {} labels",
                encodings.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_types) {
            return Err(Error::Episode(format!(
                "support label {bad} outside the episode's {n_types} types"
            )));
        }
        Ok(EncodedSupport {
            encodings,
            labels,
            n_types,
        })
    }

    pub fn dim(&self) -> usize {
        self.encodings.cols()
    }
}

/// Mean encoding of the support samples labelled `t`.
pub fn support_mean(support: &EncodedSupport, t: usize) -> Result<Vec<f64>> {
    let rows = support
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == t)
        .map(|(i, _)| support.encodings.row(i));
    linalg::mean_of(rows).ok_or_else(|| Error::Episode(format!("no support samples for type index {t}")))
}

pub fn gate(m_t: &[f64], h_t: &[f64], params: &GateParams) -> Result<Vec<f64>> {
    let d = params.dim();
    linalg::check_len("support mean", m_t, d)?;
    linalg::check_len("knowledge encoding", h_t, d)?;
    params.validate()?;
    let mut input = Vec::with_capacity(3 * d);
    input.extend_from_slice(m_t);
    input.extend(m_t.iter().zip(h_t).map(|(m, h)| m - h));
    input.extend_from_slice(h_t);
    let pre = params.weight.matvec(&input)?;
    Ok(pre
        .iter()
        .zip(params.bias.as_slice())
        .map(|(z, b)| sigmoid_scalar(z + b).clamp(GATE_FLOOR, 1.0 - GATE_FLOOR))
        .collect())
}

/// Records the gate on `tape`; `m_t` and `h_t` are `d x 1` columns.
pub fn gate_on(tape: &mut Tape, weight: Var, bias: Var, m_t: Var, h_t: Var) -> Result<Var> {
    let diff = tape.sub(m_t, h_t)?;
    let x = tape.vconcat(&[m_t, diff, h_t])?;
    let z = tape.matmul(weight, x)?;
    let z = tape.add(z, bias)?;
    let s = tape.sigmoid(z);
    Ok(tape.clamp(s, GATE_FLOOR, 1.0 - GATE_FLOOR))
}

/// `Δh_t = λ_t ⊙ (m_t - h_t)`.
pub fn knowledge_offset(lambda: &[f64], m_t: &[f64], h_t: &[f64]) -> Result<Vec<f64>> {
    linalg::check_len("support mean", m_t, lambda.len())?;
    linalg::check_len("knowledge encoding", h_t, lambda.len())?;
    Ok(lambda
        .iter()
        .zip(m_t.iter().zip(h_t))
        .map(|(l, (m, h))| l * (m - h))
        .collect())
}

/// `(1 - λ) ⊙ h + λ ⊙ m`, equal to `h + Δh` and exact at both gate extremes.
pub fn adapted_mean(lambda: &[f64], m_t: &[f64], h_t: &[f64]) -> Vec<f64> {
    lambda
        .iter()
        .zip(m_t.iter().zip(h_t))
        .map(|(l, (m, h))| (1.0 - l) * h + l * m)
        .collect()
}

/// Prior quantities for one type of the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypePrior {
    pub support_mean: Vec<f64>,
    pub knowledge: Option<Vec<f64>>,
    pub gate: Option<Vec<f64>>,
    pub offset: Option<Vec<f64>>,
    /// Absent when the mode carries no prior.
    pub prior_mean: Option<Vec<f64>>,
}

impl TypePrior {
    /// Adaptive prior from explicit gate values.
    pub fn adapted(support_mean: Vec<f64>, knowledge: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        let offset = knowledge_offset(&lambda, &support_mean, &knowledge)?;
        let prior_mean = adapted_mean(&lambda, &support_mean, &knowledge);
        Ok(TypePrior {
            support_mean,
            knowledge: Some(knowledge),
            gate: Some(lambda),
            offset: Some(offset),
            prior_mean: Some(prior_mean),
        })
    }

    pub fn fixed(support_mean: Vec<f64>, knowledge: Vec<f64>) -> Self {
        let d = knowledge.len();
        TypePrior {
            support_mean,
            prior_mean: Some(knowledge.clone()),
            knowledge: Some(knowledge),
            gate: None,
            offset: Some(vec![0.0; d]),
        }
    }

    pub fn absent(support_mean: Vec<f64>) -> Self {
        TypePrior {
            support_mean,
            knowledge: None,
            gate: None,
            offset: None,
            prior_mean: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mode: Mode,
    pub types: Vec<TypePrior>,
    /// Mean encoding of the whole support set.
    pub global_mean: Vec<f64>,
}

impl PriorSpec {
    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn dim(&self) -> usize {
        self.global_mean.len()
    }

    pub fn has_prior(&self) -> bool {
        self.types.iter().all(|t| t.prior_mean.is_some())
    }
}

/// Builds the per-type prior for `mode`. `knowledge[t]` is the encoding of
/// type `t`'s frame (required in `ake`/`kb`; ignored otherwise).
pub fn build_prior(
    support: &EncodedSupport,
    knowledge: Option<&[Vec<f64>]>,
    gate_params: &GateParams,
    mode: Mode,
) -> Result<PriorSpec> {
    let n = support.n_types;
    let global_mean =
        linalg::mean_of(support.encodings.row_iter()).ok_or_else(|| Error::Episode("empty support set".into()))?;
    let mut types = Vec::with_capacity(n);
    for t in 0..n {
        let m_t = support_mean(support, t)?;
        let prior = match mode {
            Mode::Ake | Mode::Kb => {
                let h_t = knowledge
                    .and_then(|k| k.get(t))
                    .ok_or_else(|| Error::Config(format!("{mode} mode needs a knowledge encoding for type index {t}")))?
                    .clone();
                linalg::check_len("knowledge encoding", &h_t, m_t.len())?;
                if mode == Mode::Ake {
                    let lambda = gate(&m_t, &h_t, gate_params)?;
                    TypePrior::adapted(m_t, h_t, lambda)?
                } else {
                    TypePrior::fixed(m_t, h_t)
                }
            }
            Mode::Ta | Mode::Proto => TypePrior::absent(m_t),
        };
        types.push(prior);
    }
    Ok(PriorSpec {
        mode,
        types,
        global_mean,
    })
}

/// `Σ_t log N(v_t | prior_mean_t, I)`; zero when the mode has no prior.
pub fn prior_log_density(chain: &Mat, spec: &PriorSpec) -> Result<f64> {
    if chain.rows() != spec.n_types() {
        return Err(Error::Contract(format!(
            "chain has {} prototypes, prior has {} types",
            chain.rows(),
            spec.n_types()
        )));
    }
    let mut total = 0.0;
    for (t, prior) in spec.types.iter().enumerate() {
        if let Some(mean) = &prior.prior_mean {
            total += gaussian_log_density(chain.row(t), mean)?;
        }
    }
    Ok(total)
}
