//! Prototype posterior: support likelihood, its gradient, Langevin sampling
//! and Monte Carlo prediction.
//!
//! A chain is an `N x d` matrix whose row `t` is the prototype of the
//! episode's `t`-th type. Class probabilities are `softmax_t(E(x) · v_t)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::functions::{gaussian_log_normalizer, log_softmax, softmax_unchecked};
use crate::numerics::linalg::Mat;
use crate::numerics::rng::RngState;
use crate::numerics::tape::Tape;
use crate::prior::{EncodedSupport, Mode, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Closed-form gradient.
    Analytic,
    /// Reverse-mode differentiation of the support log-joint.
    Autodiff,
}

/// Which prior-gradient formula to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CMode {
    /// True gradient of the log-joint: unit prior coefficient and the full
    /// softmax coupling across types.
    Exact,
    /// Prior terms scaled by `C = log (2π)^{-d/2}` and the likelihood sum
    /// restricted to same-type samples. Kept for comparison; it is not the
    /// gradient of any density used here.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgldConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub n_chains: usize,
    pub gradient_mode: GradientMode,
    pub c_mode: CMode,
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig {
            epsilon: 0.01,
            steps: 5,
            n_chains: 10,
            gradient_mode: GradientMode::Analytic,
            c_mode: CMode::Exact,
        }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("step size {} must be >= 0", self.epsilon)));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        if self.gradient_mode == GradientMode::Autodiff && self.c_mode == CMode::PaperLiteral {
            return Err(Error::Config(
                "the literal prior constant has no log-density to differentiate; use the analytic gradient".into(),
            ));
        }
        Ok(())
    }
}

/// `N_s` prototype samples, each `N x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeChains {
    pub chains: Vec<Mat>,
}

impl PrototypeChains {
    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }
}

/// `log softmax_t(encoding · v_t)` over the chain's types.
pub fn class_log_probs(encoding: &[f64], chain: &Mat) -> Result<Vec<f64>> {
    if chain.rows() == 0 {
        return Err(Error::Contract("chain has no prototypes".into()));
    }
    let logits = chain.matvec(encoding)?;
    log_softmax(&logits)
}

fn check_chain(chain: &Mat, support: &EncodedSupport, spec: &PriorSpec) -> Result<()> {
    if chain.rows() != spec.n_types() || support.n_types != spec.n_types() {
        return Err(Error::Contract(format!(
            "chain covers {} types, support {}, prior {}",
            chain.rows(),
            support.n_types,
            spec.n_types()
        )));
    }
    if chain.cols() != support.dim() || chain.cols() != spec.dim() {
        return Err(Error::Dimension(format!(
            "prototype dimension {} vs encoding dimension {}",
            chain.cols(),
            support.dim()
        )));
    }
    Ok(())
}

/// `Σ_s log p(y_s | x_s, V) + log p(V)`; the prior term is dropped in modes
/// without a prior.
pub fn support_log_joint(support: &EncodedSupport, chain: &Mat, spec: &PriorSpec) -> Result<f64> {
    check_chain(chain, support, spec)?;
    let mut total = 0.0;
    for (row, &label) in support.encodings.row_iter().zip(&support.labels) {
        if label >= chain.rows() {
            return Err(Error::Episode(format!(
                "support label {label} outside the episode types"
            )));
        }
        total += class_log_probs(row, chain)?[label];
    }
    Ok(total + crate::prior::prior_log_density(chain, spec)?)
}

/// The constant `log (2π)^{-d/2}` of the literal prior-gradient formula.
pub fn literal_constant(d: usize) -> f64 {
    gaussian_log_normalizer(d)
}

/// Gradient of the support log-joint with respect to every prototype, or
/// its literal-constant variant (see [`CMode`]).
pub fn analytic_gradient(support: &EncodedSupport, chain: &Mat, spec: &PriorSpec, c_mode: CMode) -> Result<Mat> {
    check_chain(chain, support, spec)?;
    let (n, d) = chain.shape();
    let mut grad = Mat::zeros(n, d);
    match c_mode {
        CMode::Exact => {
            for (enc, &label) in support.encodings.row_iter().zip(&support.labels) {
                let probs = softmax_unchecked(&chain.matvec(enc)?);
                for (t, p) in probs.iter().enumerate() {
                    let coef = if t == label { 1.0 - p } else { -p };
                    for (g, e) in grad.row_mut(t).iter_mut().zip(enc) {
                        *g += coef * e;
                    }
                }
            }
            for (t, prior) in spec.types.iter().enumerate() {
                if let Some(mean) = &prior.prior_mean {
                    for ((g, m), v) in grad.row_mut(t).iter_mut().zip(mean).zip(chain.row(t)) {
                        *g += m - v;
                    }
                }
            }
        }
        CMode::PaperLiteral => {
            if !spec.mode.uses_knowledge() {
                return Err(Error::Config(format!(
                    "{} mode has no prior for the literal constant to scale",
                    spec.mode
                )));
            }
            let c = literal_constant(d);
            let mut counts = vec![0usize; n];
            for &l in &support.labels {
                counts[l] += 1;
            }
            for (enc, &label) in support.encodings.row_iter().zip(&support.labels) {
                let probs = softmax_unchecked(&chain.matvec(enc)?);
                let coef = 1.0 - probs[label];
                let prior = &spec.types[label];
                let row = grad.row_mut(label);
                for (j, (g, e)) in row.iter_mut().zip(enc).enumerate() {
                    *g += coef * e;
                    if let Some(lambda) = &prior.gate {
                        *g += c * lambda[j] / counts[label] as f64 * e;
                    }
                }
            }
            for (t, prior) in spec.types.iter().enumerate() {
                let h = prior
                    .knowledge
                    .as_ref()
                    .ok_or_else(|| Error::Config("literal gradient needs knowledge encodings".into()))?;
                let v = chain.row(t).to_vec();
                for (j, g) in grad.row_mut(t).iter_mut().enumerate() {
                    let kept = match &prior.gate {
                        Some(lambda) => (1.0 - lambda[j]) * h[j],
                        None => h[j],
                    };
                    *g += c * (kept - v[j]);
                }
            }
        }
    }
    Ok(grad)
}

/// Gradient of [`support_log_joint`] by reverse-mode differentiation.
pub fn autodiff_gradient(support: &EncodedSupport, chain: &Mat, spec: &PriorSpec) -> Result<Mat> {
    check_chain(chain, support, spec)?;
    let mut tape = Tape::new();
    let v = tape.param(chain.clone());
    let s = tape.constant(support.encodings.clone());
    let v_t = tape.transpose(v);
    let logits = tape.matmul(s, v_t)?;
    let log_probs = tape.log_softmax_rows(logits)?;
    let picked = tape.gather(log_probs, support.labels.clone())?;
    let mut total = tape.sum(picked);
    if spec.has_prior() {
        let means: Vec<&[f64]> = spec
            .types
            .iter()
            .map(|t| t.prior_mean.as_deref().expect("checked"))
            .collect();
        let mu = tape.constant(Mat::from_rows(&means)?);
        let diff = tape.sub(v, mu)?;
        let sq = tape.dot(diff, diff)?;
        let prior = tape.scale(sq, -0.5);
        total = tape.add(total, prior)?;
    }
    let grads = tape.backward(total)?;
    Ok(grads.wrt(v))
}

fn posterior_gradient(support: &EncodedSupport, chain: &Mat, spec: &PriorSpec, config: &SgldConfig) -> Result<Mat> {
    match config.gradient_mode {
        GradientMode::Analytic => analytic_gradient(support, chain, spec, config.c_mode),
        GradientMode::Autodiff => autodiff_gradient(support, chain, spec),
    }
}

/// Informed starting point shared by every chain:
/// `m_t + h_t + Δh_t - m` with knowledge, `m_t` without.
pub fn init_prototypes(spec: &PriorSpec, n_chains: usize) -> Result<PrototypeChains> {
    let rows: Vec<Vec<f64>> = spec
        .types
        .iter()
        .map(|t| match (&t.knowledge, spec.mode) {
            (Some(h), Mode::Ake | Mode::Kb) => {
                let zero;
                let offset = match &t.offset {
                    Some(o) => o.as_slice(),
                    None => {
                        zero = vec![0.0; h.len()];
                        zero.as_slice()
                    }
                };
                t.support_mean
                    .iter()
                    .zip(h)
                    .zip(offset)
                    .zip(&spec.global_mean)
                    .map(|(((m_t, h_t), dh), m)| m_t + h_t + dh - m)
                    .collect()
            }
            _ => t.support_mean.clone(),
        })
        .collect();
    let chain = Mat::from_rows(&rows)?;
    Ok(PrototypeChains {
        chains: vec![chain; n_chains],
    })
}

/// One Langevin update with externally supplied noise:
/// `V ← V + (ε/2) g + √ε z`.
pub fn sgld_step_with_noise(chain: &mut Mat, gradient: &Mat, epsilon: f64, noise: &Mat, step: usize) -> Result<()> {
    if !gradient.is_finite() {
        return Err(Error::Sampler {
            step,
            message: "non-finite posterior gradient".into(),
        });
    }
    if epsilon == 0.0 {
        return Ok(());
    }
    chain.axpy(epsilon / 2.0, gradient)?;
    chain.axpy(epsilon.sqrt(), noise)?;
    if !chain.is_finite() {
        return Err(Error::Sampler {
            step,
            message: "prototypes left the finite range".into(),
        });
    }
    Ok(())
}

/// One Langevin update drawing fresh standard-normal noise for every
/// coordinate of every type.
pub fn sgld_step(chain: &mut Mat, gradient: &Mat, epsilon: f64, rng: &mut RngState, step: usize) -> Result<()> {
    let noise = draw_noise(rng, chain.rows(), chain.cols());
    sgld_step_with_noise(chain, gradient, epsilon, &noise, step)
}

fn draw_noise(rng: &mut RngState, n: usize, d: usize) -> Mat {
    let data = (0..n * d).map(|_| rng.standard_normal()).collect();
    Mat::from_vec(n, d, data).expect("shape")
}

/// Pre-drawn Langevin noise, `[chain][step]`, each `N x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainNoise {
    pub per_chain: Vec<Vec<Mat>>,
}

impl ChainNoise {
    /// Draws one independent stream per chain from a base seed taken off
    /// `rng`, so repeated calls on the same `rng` differ.
    pub fn draw(rng: &mut RngState, config: &SgldConfig, n: usize, d: usize) -> Self {
        let base = RngState::new(rand::RngCore::next_u64(rng));
        let per_chain = (0..config.n_chains)
            .map(|c| {
                let mut stream = base.child(c as u64);
                (0..config.steps).map(|_| draw_noise(&mut stream, n, d)).collect()
            })
            .collect();
        ChainNoise { per_chain }
    }
}

/// Runs every chain from the informed initialization with the given noise.
pub fn run_chains(
    support: &EncodedSupport,
    spec: &PriorSpec,
    config: &SgldConfig,
    noise: &ChainNoise,
) -> Result<PrototypeChains> {
    config.validate()?;
    let init = init_prototypes(spec, 1)?.chains.remove(0);
    if noise.per_chain.len() != config.n_chains {
        return Err(Error::Contract(format!(
            "noise for {} chains, config asks for {}",
            noise.per_chain.len(),
            config.n_chains
        )));
    }
    let chains = noise
        .per_chain
        .par_iter()
        .map(|steps| {
            let mut chain = init.clone();
            for (step, z) in steps.iter().take(config.steps).enumerate() {
                let grad = posterior_gradient(support, &chain, spec, config)?;
                sgld_step_with_noise(&mut chain, &grad, config.epsilon, z, step)?;
            }
            Ok(chain)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrototypeChains { chains })
}

/// Draws `n_chains` approximate posterior samples by Langevin dynamics.
pub fn sample_posterior(
    support: &EncodedSupport,
    spec: &PriorSpec,
    config: &SgldConfig,
    rng: &mut RngState,
) -> Result<PrototypeChains> {
    config.validate()?;
    let noise = ChainNoise::draw(rng, config, spec.n_types(), spec.dim());
    run_chains(support, spec, config, &noise)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Monte Carlo averaged class distribution over the episode's types.
    pub probs: Vec<f64>,
    /// Arg-max type index; ties go to the lowest index.
    pub label: usize,
}

/// `p(y | x) ≈ (1/N_s) Σ_s softmax(E(x) · V^(s))` for every query row.
pub fn predict(queries: &Mat, chains: &PrototypeChains) -> Result<Vec<Prediction>> {
    if chains.is_empty() {
        return Err(Error::Contract("prediction needs at least one chain".into()));
    }
    let n = chains.chains[0].rows();
    let inv = 1.0 / chains.len() as f64;
    queries
        .row_iter()
        .take(queries.rows())
        .map(|q| {
            let mut probs = vec![0.0; n];
            for chain in &chains.chains {
                let p = softmax_unchecked(&chain.matvec(q)?);
                for (acc, x) in probs.iter_mut().zip(p) {
                    *acc += x;
                }
            }
            probs.iter_mut().for_each(|p| *p *= inv);
            Ok(Prediction {
                label: argmax_lowest(&probs),
                probs,
            })
        })
        .collect()
}

/// Index of the maximum; the first one wins ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Point-estimate prototypes (the support means), for the no-sampling mode.
pub fn mean_prototypes(spec: &PriorSpec) -> Result<PrototypeChains> {
    let rows: Vec<&[f64]> = spec.types.iter().map(|t| t.support_mean.as_slice()).collect();
    Ok(PrototypeChains {
        chains: vec![Mat::from_rows(&rows)?],
    })
}

/// Largest per-coordinate difference between two chain sets.
pub fn max_chain_difference(a: &PrototypeChains, b: &PrototypeChains) -> f64 {
    a.chains
        .iter()
        .zip(&b.chains)
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Per-coordinate mean over chains of the final prototypes.
pub fn chain_mean(chains: &PrototypeChains) -> Result<Mat> {
    let first = chains
        .chains
        .first()
        .ok_or_else(|| Error::Contract("no chains".into()))?;
    let mut acc = Mat::zeros(first.rows(), first.cols());
    for c in &chains.chains {
        acc.axpy(1.0 / chains.len() as f64, c)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff::{finite_difference_grad, relative_error};
    use crate::numerics::linalg;
    use crate::prior::{build_prior, GateParams};

    fn random_mat(rng: &mut RngState, r: usize, c: usize, scale: f64) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.standard_normal() * scale).collect()).unwrap()
    }

    fn instance(rng: &mut RngState, n: usize, m: usize, d: usize, mode: Mode) -> (EncodedSupport, PriorSpec, Mat) {
        let enc = random_mat(rng, n * m, d, 0.7);
        let labels = (0..n * m).map(|i| i % n).collect();
        let support = EncodedSupport::new(enc, labels, n).unwrap();
        let knowledge: Vec<Vec<f64>> = (0..n).map(|_| random_mat(rng, 1, d, 1.0).into_vec()).collect();
        let mut gate = GateParams::init(d, rng);
        gate.bias = random_mat(rng, d, 1, 1.0);
        let spec = build_prior(&support, Some(&knowledge), &gate, mode).unwrap();
        let chain = random_mat(rng, n, d, 1.0);
        (support, spec, chain)
    }

    #[test]
    fn class_log_probs_examples() {
        let single = Mat::from_rows(&[vec![3.0, -1.0]]).unwrap();
        assert_eq!(class_log_probs(&[0.4, 0.2], &single).unwrap(), vec![0.0]);
        let v = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]]).unwrap();
        let lp = class_log_probs(&[0.0, 0.0], &v).unwrap();
        for x in lp {
            assert!((x.exp() - 1.0 / 3.0).abs() < 1e-15);
        }
        let v = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let lp = class_log_probs(&[2f64.ln(), 0.0], &v).unwrap();
        assert!((lp[0].exp() - 2.0 / 3.0).abs() < 1e-15);
        assert!((lp[1].exp() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn support_log_joint_examples() {
        let support = EncodedSupport::new(Mat::from_rows(&[vec![0.3, 0.1]]).unwrap(), vec![0], 1).unwrap();
        let spec = build_prior(&support, None, &GateParams::zeros(2), Mode::Ta).unwrap();
        let v = Mat::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(support_log_joint(&support, &v, &spec).unwrap(), 0.0);

        let support = EncodedSupport::new(Mat::zeros(2, 2), vec![0, 1], 2).unwrap();
        let k = vec![vec![1.0, 0.0], vec![0.0, -1.0]];
        let spec = build_prior(&support, Some(&k), &GateParams::zeros(2), Mode::Kb).unwrap();
        let v = Mat::from_rows(&[vec![0.5, 0.5], vec![-1.0, 2.0]]).unwrap();
        let expected = 2.0 * 0.5f64.ln() + crate::prior::prior_log_density(&v, &spec).unwrap();
        assert!((support_log_joint(&support, &v, &spec).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn flat_likelihood_gradient_is_the_prior_pull() {
        let mut rng = RngState::new(4);
        let support = EncodedSupport::new(Mat::zeros(4, 3), vec![0, 1, 0, 1], 2).unwrap();
        let k = vec![vec![1.0, 0.0, 2.0], vec![0.0, -1.0, 0.5]];
        let spec = build_prior(&support, Some(&k), &GateParams::init(3, &mut rng), Mode::Ake).unwrap();
        let v = random_mat(&mut rng, 2, 3, 1.0);
        let g = analytic_gradient(&support, &v, &spec, CMode::Exact).unwrap();
        for t in 0..2 {
            let mean = spec.types[t].prior_mean.as_ref().unwrap();
            for j in 0..3 {
                assert_eq!(g.get(t, j), mean[j] - v.get(t, j));
            }
        }
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let mut rng = RngState::new(11);
        for mode in [Mode::Ake, Mode::Kb, Mode::Ta] {
            for _ in 0..10 {
                let (support, spec, chain) = instance(&mut rng, 3, 2, 8, mode);
                let g = analytic_gradient(&support, &chain, &spec, CMode::Exact).unwrap();
                let numeric = finite_difference_grad(
                    |x| {
                        let v = Mat::from_vec(3, 8, x.to_vec()).unwrap();
                        support_log_joint(&support, &v, &spec).unwrap()
                    },
                    chain.as_slice(),
                    1e-5,
                )
                .unwrap();
                for (a, b) in g.as_slice().iter().zip(&numeric) {
                    assert!(relative_error(*a, *b) <= 1e-5, "{mode}: {a} vs {b}");
                }
                let ad = autodiff_gradient(&support, &chain, &spec).unwrap();
                for (a, b) in g.as_slice().iter().zip(ad.as_slice()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn literal_constant_at_two_dimensions() {
        let c = literal_constant(2);
        assert!((c + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((c + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn literal_mode_needs_a_prior() {
        let mut rng = RngState::new(1);
        let (support, spec, chain) = instance(&mut rng, 2, 2, 3, Mode::Ta);
        assert!(matches!(
            analytic_gradient(&support, &chain, &spec, CMode::PaperLiteral),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn literal_mode_follows_the_written_formula() {
        // One type, so the restricted and the full likelihood sums coincide and
        // only the prior term differs from the exact gradient.
        let mut rng = RngState::new(2);
        let (support, spec, chain) = instance(&mut rng, 1, 3, 4, Mode::Ake);
        let exact = analytic_gradient(&support, &chain, &spec, CMode::Exact).unwrap();
        let literal = analytic_gradient(&support, &chain, &spec, CMode::PaperLiteral).unwrap();
        let c = literal_constant(4);
        let mean = spec.types[0].prior_mean.as_ref().unwrap();
        for j in 0..4 {
            let likelihood = exact.get(0, j) - (mean[j] - chain.get(0, j));
            let expected = likelihood + c * (mean[j] - chain.get(0, j));
            assert!((literal.get(0, j) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn init_examples() {
        let support = EncodedSupport::new(Mat::zeros(2, 2), vec![0, 1], 2).unwrap();
        let k = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let spec = build_prior(&support, Some(&k), &GateParams::zeros(2), Mode::Ake).unwrap();
        let init = init_prototypes(&spec, 3).unwrap();
        assert_eq!(init.len(), 3);
        assert!(init.chains.iter().all(|c| c == &Mat::zeros(2, 2)));

        let support = EncodedSupport::new(
            Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap(),
            vec![0, 0],
            1,
        )
        .unwrap();
        let k = vec![vec![0.5, -0.5]];
        let spec = build_prior(
            &support,
            Some(&k),
            &GateParams::init(2, &mut RngState::new(0)),
            Mode::Ake,
        )
        .unwrap();
        let init = init_prototypes(&spec, 1).unwrap();
        let t = &spec.types[0];
        let expected = linalg::add(&k[0], t.offset.as_ref().unwrap());
        for (a, b) in init.chains[0].row(0).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_step_leaves_chain_bitwise_unchanged() {
        let mut rng = RngState::new(3);
        let mut chain = random_mat(&mut rng, 2, 3, 1.0);
        let before = chain.clone();
        let grad = random_mat(&mut rng, 2, 3, 1.0);
        sgld_step(&mut chain, &grad, 0.0, &mut rng, 0).unwrap();
        assert_eq!(chain, before);
        sgld_step_with_noise(&mut chain, &Mat::zeros(2, 3), 0.3, &Mat::zeros(2, 3), 0).unwrap();
        assert_eq!(chain, before);
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let mut chain = Mat::zeros(1, 2);
        let grad = Mat::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        let err = sgld_step(&mut chain, &grad, 0.01, &mut RngState::new(0), 7).unwrap_err();
        assert!(matches!(err, Error::Sampler { step: 7, .. }));
    }

    #[test]
    fn sampling_is_reproducible_and_steps_zero_is_init() {
        let mut rng = RngState::new(5);
        let (support, spec, _) = instance(&mut rng, 3, 2, 4, Mode::Ake);
        let config = SgldConfig {
            steps: 0,
            ..SgldConfig::default()
        };
        let chains = sample_posterior(&support, &spec, &config, &mut RngState::new(1)).unwrap();
        let init = init_prototypes(&spec, config.n_chains).unwrap();
        assert_eq!(chains, init);

        let config = SgldConfig::default();
        let a = sample_posterior(&support, &spec, &config, &mut RngState::new(1)).unwrap();
        let b = sample_posterior(&support, &spec, &config, &mut RngState::new(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.chains[0], a.chains[1], "chains use independent noise");
    }

    #[test]
    fn analytic_and_autodiff_trajectories_agree() {
        let mut rng = RngState::new(6);
        let (support, spec, _) = instance(&mut rng, 3, 2, 5, Mode::Ake);
        let analytic = SgldConfig {
            steps: 50,
            ..SgldConfig::default()
        };
        let autodiff = SgldConfig {
            gradient_mode: GradientMode::Autodiff,
            ..analytic
        };
        let a = sample_posterior(&support, &spec, &analytic, &mut RngState::new(9)).unwrap();
        let b = sample_posterior(&support, &spec, &autodiff, &mut RngState::new(9)).unwrap();
        assert!(max_chain_difference(&a, &b) < 1e-9);
    }

    #[test]
    fn predict_examples() {
        let chain = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let same = PrototypeChains {
            chains: vec![chain.clone(); 4],
        };
        let one = PrototypeChains {
            chains: vec![chain.clone()],
        };
        let q = Mat::from_rows(&[vec![0.3, -0.2], vec![0.0, 0.0]]).unwrap();
        let a = predict(&q, &same).unwrap();
        let b = predict(&q, &one).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, r) in x.probs.iter().zip(&y.probs) {
                assert!((p - r).abs() < 1e-15);
            }
        }
        assert_eq!(a[1].probs, vec![0.5, 0.5]);
        assert_eq!(a[1].label, 0);
        assert!(predict(&q, &PrototypeChains { chains: vec![] }).is_err());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax_lowest(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax_lowest(&[0.25; 4]), 0);
    }

    #[test]
    fn support_log_joint_matches_brute_force() {
        let mut rng = RngState::new(31);
        for mode in [Mode::Ake, Mode::Kb, Mode::Ta] {
            let (support, spec, v) = instance(&mut rng, 3, 2, 4, mode);
            let mut expected = 0.0;
            for (i, &y) in support.labels.iter().enumerate() {
                let s = support.encodings.row(i);
                let scores: Vec<f64> = (0..3).map(|t| (0..4).map(|j| s[j] * v.get(t, j)).sum()).collect();
                let norm: f64 = scores.iter().map(|x| x.exp()).sum();
                expected += (scores[y].exp() / norm).ln();
            }
            for t in 0..3 {
                if let Some(mean) = &spec.types[t].prior_mean {
                    let sq: f64 = (0..4).map(|j| (v.get(t, j) - mean[j]).powi(2)).sum();
                    expected += -2.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * sq;
                }
            }
            let got = support_log_joint(&support, &v, &spec).unwrap();
            assert!((got - expected).abs() < 1e-10, "{mode}: {got} vs {expected}");
        }
    }

    #[test]
    fn hand_set_initialization() {
        let enc = Mat::from_rows(&[vec![1.0, 2.0], vec![-1.0, 1.0], vec![3.0, 0.0], vec![1.0, -3.0]]).unwrap();
        let support = EncodedSupport::new(enc, vec![0, 1, 0, 1], 2).unwrap();
        let k = vec![vec![0.5, 0.5], vec![-1.0, 2.0]];
        // Zero gate weights give lambda = 1/2 everywhere. By hand: m_0 = (2, 1),
        // m_1 = (0, -1), m = (1, 0).
        let spec = build_prior(&support, Some(&k), &GateParams::zeros(2), Mode::Ake).unwrap();
        let init = init_prototypes(&spec, 2).unwrap();
        for chain in &init.chains {
            assert_eq!(chain.row(0), &[2.25, 1.75]);
            assert_eq!(chain.row(1), &[-1.5, -0.5]);
        }
        let spec = build_prior(&support, Some(&k), &GateParams::zeros(2), Mode::Kb).unwrap();
        assert_eq!(init_prototypes(&spec, 1).unwrap().chains[0].row(0), &[1.5, 1.5]);
        let spec = build_prior(&support, None, &GateParams::zeros(2), Mode::Ta).unwrap();
        assert_eq!(init_prototypes(&spec, 1).unwrap().chains[0].row(1), &[0.0, -1.0]);
    }

    #[test]
    fn two_chain_average_by_hand() {
        let a = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Mat::from_rows(&[vec![0.0, 2.0], vec![1.0, 0.0]]).unwrap();
        let q = Mat::from_rows(&[vec![2f64.ln(), 3f64.ln()]]).unwrap();
        // Chain a scores (ln 2, ln 3) -> (2/5, 3/5); chain b (2 ln 3, ln 2) -> (9/11, 2/11).
        let p = predict(&q, &PrototypeChains { chains: vec![a, b] }).unwrap();
        assert!((p[0].probs[0] - 67.0 / 110.0).abs() < 1e-15);
        assert!((p[0].probs[1] - 43.0 / 110.0).abs() < 1e-15);
        assert_eq!(p[0].label, 0);
    }

    proptest::proptest! {
        #[test]
        fn predictions_are_distributions(seed in 0u64..10_000, n in 1usize..6, d in 1usize..6, chains in 1usize..5) {
            let mut rng = RngState::new(seed);
            let c = PrototypeChains { chains: (0..chains).map(|_| random_mat(&mut rng, n, d, 2.0)).collect() };
            let q = random_mat(&mut rng, 4, d, 2.0);
            for p in predict(&q, &c).unwrap() {
                proptest::prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                proptest::prop_assert!(p.probs.iter().all(|&x| (0.0..=1.0).contains(&x)));
                proptest::prop_assert!(p.label < n);
            }
        }

        #[test]
        fn doubling_chains_averages_two_halves(seed in 0u64..10_000, k in 1usize..5) {
            let mut rng = RngState::new(seed);
            let (support, spec, _) = instance(&mut rng, 3, 2, 3, Mode::Ake);
            let config = SgldConfig { n_chains: 2 * k, ..SgldConfig::default() };
            let all = sample_posterior(&support, &spec, &config, &mut RngState::new(seed)).unwrap();
            let first = PrototypeChains { chains: all.chains[..k].to_vec() };
            let second = PrototypeChains { chains: all.chains[k..].to_vec() };
            let q = random_mat(&mut rng, 5, 3, 1.0);
            let (pa, p1, p2) = (predict(&q, &all).unwrap(), predict(&q, &first).unwrap(), predict(&q, &second).unwrap());
            for ((a, x), y) in pa.iter().zip(&p1).zip(&p2) {
                for t in 0..3 {
                    proptest::prop_assert!((a.probs[t] - 0.5 * (x.probs[t] + y.probs[t])).abs() < 1e-14);
                    let (lo, hi) = (x.probs[t].min(y.probs[t]), x.probs[t].max(y.probs[t]));
                    proptest::prop_assert!(a.probs[t] >= lo - 1e-14 && a.probs[t] <= hi + 1e-14);
                }
            }
        }
    }
}
