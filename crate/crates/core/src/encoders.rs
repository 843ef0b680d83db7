//! Sample and knowledge encoders.
//!
//! Both encoders share one structure: a trigger representation, an attention
//! pooled context queried by that trigger, and a `tanh` feed-forward head over
//! their concatenation. They map into the same `d`-dimensional space so that
//! knowledge encodings can act as prototype priors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::{self, Mat};
use crate::numerics::rng::RngState;
use crate::numerics::tape::{Tape, Var};

/// Inclusive token span `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    fn check(&self, token_count: usize, what: &str) -> Result<()> {
        if self.start > self.end || self.end >= token_count {
            return Err(Error::Input(format!(
                "{what} span [{}, {}] outside 0..{token_count}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// A tokenized sentence as an embedding sequence with a candidate trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSample {
    pub token_ids: Vec<u32>,
    /// One row per token, `len x d_emb`.
    pub tokens: Mat,
    pub trigger: Span,
    pub label: Option<String>,
}

impl EmbeddedSample {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.rows() == 0 {
            return Err(Error::Input("sample has no tokens".into()));
        }
        if self.token_ids.len() != self.tokens.rows() {
            return Err(Error::Input(format!(
                "sample has {} token ids but {} embeddings",
                self.token_ids.len(),
                self.tokens.rows()
            )));
        }
        self.trigger.check(self.tokens.rows(), "trigger")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    SuperOrdinate,
}

/// Knowledge frame for one event type: definition, argument mentions inside
/// the definition, and linguistic units.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameKnowledge {
    pub event_type: String,
    pub definition_ids: Vec<u32>,
    /// `len x d_emb`.
    pub definition_tokens: Mat,
    /// One list of mention spans per argument.
    pub argument_spans: Vec<Vec<Span>>,
    pub lu_ids: Vec<u32>,
    /// `n_lu x d_emb`.
    pub lu_tokens: Mat,
    pub match_kind: MatchKind,
}

impl FrameKnowledge {
    pub fn validate(&self) -> Result<()> {
        let ctx = |msg: String| Error::Input(format!("frame {}: {msg}", self.event_type));
        if self.definition_tokens.rows() == 0 {
            return Err(ctx("empty definition".into()));
        }
        if self.lu_tokens.rows() == 0 {
            return Err(ctx("at least one linguistic unit is required".into()));
        }
        if self.argument_spans.is_empty() || self.argument_spans.iter().any(|a| a.is_empty()) {
            return Err(ctx("every frame needs an argument, each with a mention".into()));
        }
        for span in self.argument_spans.iter().flatten() {
            span.check(self.definition_tokens.rows(), "argument")
                .map_err(|e| ctx(e.to_string()))?;
        }
        Ok(())
    }

    /// Mean definition-token vector over the argument's mentions (each
    /// mention is itself the mean over its span).
    pub fn argument_encodings(&self) -> Result<Mat> {
        let mut rows = Vec::with_capacity(self.argument_spans.len());
        for mentions in &self.argument_spans {
            let mut span_means = Vec::with_capacity(mentions.len());
            for span in mentions {
                span.check(self.definition_tokens.rows(), "argument")?;
                span_means.push(span_mean(&self.definition_tokens, *span));
            }
            let mean = linalg::mean_of(span_means.iter().map(|v| v.as_slice()))
                .ok_or_else(|| Error::Input(format!("frame {}: argument without mentions", self.event_type)))?;
            rows.push(mean);
        }
        Mat::from_rows(&rows)
    }

    /// Stand-in for a sentence-level vector of the definition.
    pub fn sentinel(&self) -> Vec<f64> {
        let all = Span::new(0, self.definition_tokens.rows() - 1);
        span_mean(&self.definition_tokens, all)
    }
}

fn span_mean(tokens: &Mat, span: Span) -> Vec<f64> {
    linalg::mean_of((span.start..=span.end).map(|j| tokens.row(j))).expect("non-empty span")
}

/// Mean token embedding over the inclusive trigger span.
pub fn trigger_encoding(sample: &EmbeddedSample) -> Result<Vec<f64>> {
    sample.trigger.check(sample.tokens.rows(), "trigger")?;
    Ok(span_mean(&sample.tokens, sample.trigger))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub d_emb: usize,
    pub d_att: usize,
    pub d: usize,
}

/// Query/key/value projections of one attention role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProjection {
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Mat,
    /// Column vector.
    pub bias: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    /// Trigger-to-sentence attention; query input is `d_emb`.
    pub sample_attention: AttentionProjection,
    /// Sentinel-to-LU attention; query input is `d_emb`.
    pub lu_attention: AttentionProjection,
    /// Knowledge-trigger-to-argument attention; query input is `d_att`.
    pub argument_attention: AttentionProjection,
    /// `d x (d_emb + d_att)`.
    pub sample_head: Dense,
    /// `d x (2 d_att)`.
    pub knowledge_head: Dense,
    pub dropout_rate: f64,
    /// Divide attention logits by `sqrt(d_att)`.
    #[serde(default)]
    pub scaled_attention: bool,
}

fn xavier(rng: &mut RngState, rows: usize, cols: usize) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
    Mat::from_vec(rows, cols, data).expect("shape")
}

impl AttentionProjection {
    fn init(rng: &mut RngState, d_att: usize, query_in: usize, kv_in: usize) -> Self {
        AttentionProjection {
            query: xavier(rng, d_att, query_in),
            key: xavier(rng, d_att, kv_in),
            value: xavier(rng, d_att, kv_in),
        }
    }

    fn zeros(d_att: usize, query_in: usize, kv_in: usize) -> Self {
        AttentionProjection {
            query: Mat::zeros(d_att, query_in),
            key: Mat::zeros(d_att, kv_in),
            value: Mat::zeros(d_att, kv_in),
        }
    }
}

impl EncoderParams {
    pub fn init(dims: EncoderDims, dropout_rate: f64, rng: &mut RngState) -> Self {
        let EncoderDims { d_emb, d_att, d } = dims;
        EncoderParams {
            dims,
            sample_attention: AttentionProjection::init(rng, d_att, d_emb, d_emb),
            lu_attention: AttentionProjection::init(rng, d_att, d_emb, d_emb),
            argument_attention: AttentionProjection::init(rng, d_att, d_att, d_emb),
            sample_head: Dense {
                weight: xavier(rng, d, d_emb + d_att),
                bias: Mat::zeros(d, 1),
            },
            knowledge_head: Dense {
                weight: xavier(rng, d, 2 * d_att),
                bias: Mat::zeros(d, 1),
            },
            dropout_rate,
            scaled_attention: false,
        }
    }

    pub fn zeros(dims: EncoderDims) -> Self {
        let EncoderDims { d_emb, d_att, d } = dims;
        EncoderParams {
            dims,
            sample_attention: AttentionProjection::zeros(d_att, d_emb, d_emb),
            lu_attention: AttentionProjection::zeros(d_att, d_emb, d_emb),
            argument_attention: AttentionProjection::zeros(d_att, d_att, d_emb),
            sample_head: Dense {
                weight: Mat::zeros(d, d_emb + d_att),
                bias: Mat::zeros(d, 1),
            },
            knowledge_head: Dense {
                weight: Mat::zeros(d, 2 * d_att),
                bias: Mat::zeros(d, 1),
            },
            dropout_rate: 0.0,
            scaled_attention: false,
        }
    }

    /// Every trainable tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<&Mat> {
        vec![
            &self.sample_attention.query,
            &self.sample_attention.key,
            &self.sample_attention.value,
            &self.lu_attention.query,
            &self.lu_attention.key,
            &self.lu_attention.value,
            &self.argument_attention.query,
            &self.argument_attention.key,
            &self.argument_attention.value,
            &self.sample_head.weight,
            &self.sample_head.bias,
            &self.knowledge_head.weight,
            &self.knowledge_head.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        vec![
            &mut self.sample_attention.query,
            &mut self.sample_attention.key,
            &mut self.sample_attention.value,
            &mut self.lu_attention.query,
            &mut self.lu_attention.key,
            &mut self.lu_attention.value,
            &mut self.argument_attention.query,
            &mut self.argument_attention.key,
            &mut self.argument_attention.value,
            &mut self.sample_head.weight,
            &mut self.sample_head.bias,
            &mut self.knowledge_head.weight,
            &mut self.knowledge_head.bias,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let EncoderDims { d_emb, d_att, d } = self.dims;
        let expected = [
            (d_att, d_emb),
            (d_att, d_emb),
            (d_att, d_emb),
            (d_att, d_emb),
            (d_att, d_emb),
            (d_att, d_emb),
            (d_att, d_att),
            (d_att, d_emb),
            (d_att, d_emb),
            (d, d_emb + d_att),
            (d, 1),
            (d, 2 * d_att),
            (d, 1),
        ];
        for (i, (m, shape)) in self.tensors().into_iter().zip(expected).enumerate() {
            m.expect_shape(shape)
                .map_err(|e| Error::Dimension(format!("encoder tensor {i}: {e}")))?;
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Tape handles for an [`AttentionProjection`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

/// Encoder parameters placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub sample_attention: AttentionVars,
    pub lu_attention: AttentionVars,
    pub argument_attention: AttentionVars,
    pub sample_head: DenseVars,
    pub knowledge_head: DenseVars,
    pub scaled_attention: bool,
}

impl EncoderVars {
    /// Registers every tensor as a trainable parameter, in [`EncoderParams::tensors`] order.
    pub fn register(tape: &mut Tape, params: &EncoderParams) -> Self {
        Self::place(tape, params, true)
    }

    /// Places the tensors as constants (inference).
    pub fn constants(tape: &mut Tape, params: &EncoderParams) -> Self {
        Self::place(tape, params, false)
    }

    fn place(tape: &mut Tape, params: &EncoderParams, trainable: bool) -> Self {
        let mut put = |m: &Mat| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let mut attention = |p: &AttentionProjection| AttentionVars {
            query: put(&p.query),
            key: put(&p.key),
            value: put(&p.value),
        };
        let sample_attention = attention(&params.sample_attention);
        let lu_attention = attention(&params.lu_attention);
        let argument_attention = attention(&params.argument_attention);
        let mut dense = |p: &Dense| DenseVars {
            weight: put(&p.weight),
            bias: put(&p.bias),
        };
        EncoderVars {
            sample_attention,
            lu_attention,
            argument_attention,
            sample_head: dense(&params.sample_head),
            knowledge_head: dense(&params.knowledge_head),
            scaled_attention: params.scaled_attention,
        }
    }

    pub fn all(&self) -> Vec<Var> {
        let a = |p: &AttentionVars| [p.query, p.key, p.value];
        let mut out = Vec::with_capacity(13);
        out.extend(a(&self.sample_attention));
        out.extend(a(&self.lu_attention));
        out.extend(a(&self.argument_attention));
        out.extend([self.sample_head.weight, self.sample_head.bias]);
        out.extend([self.knowledge_head.weight, self.knowledge_head.bias]);
        out
    }
}

/// Output of [`attention_pool`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub output: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Records single-head attention: weights `softmax(f(Wq q)^T f(Wk k_i))`,
/// output `sum_i w_i f(Wv v_i)` with `f = tanh`. Returns `(output, weights)`.
///
/// `query` is a column node; `keys` and `values` hold one item per row.
pub fn attention_pool_on(
    tape: &mut Tape,
    query: Var,
    keys: Var,
    values: Var,
    proj: &AttentionVars,
    scaled: bool,
) -> Result<(Var, Var)> {
    let (n_keys, n_values) = (tape.value(keys).rows(), tape.value(values).rows());
    if n_keys == 0 || n_keys != n_values {
        return Err(Error::Input(format!(
            "attention needs matching non-empty keys and values, got {n_keys} and {n_values}"
        )));
    }
    let q = tape.matmul(proj.query, query)?;
    let q = tape.tanh(q);
    let wk_t = tape.transpose(proj.key);
    let k = tape.matmul(keys, wk_t)?;
    let k = tape.tanh(k);
    let mut logits = tape.matmul(k, q)?;
    if scaled {
        let d_att = tape.value(q).rows() as f64;
        logits = tape.scale(logits, 1.0 / d_att.sqrt());
    }
    let weights = tape.softmax(logits)?;
    let wv_t = tape.transpose(proj.value);
    let v = tape.matmul(values, wv_t)?;
    let v = tape.tanh(v);
    let v_t = tape.transpose(v);
    let output = tape.matmul(v_t, weights)?;
    Ok((output, weights))
}

/// Plain-value form of [`attention_pool_on`].
pub fn attention_pool(
    query: &[f64],
    keys: &Mat,
    values: &Mat,
    proj: &AttentionProjection,
    scaled: bool,
) -> Result<Pooled> {
    let mut tape = Tape::new();
    let vars = AttentionVars {
        query: tape.constant(proj.query.clone()),
        key: tape.constant(proj.key.clone()),
        value: tape.constant(proj.value.clone()),
    };
    let q = tape.constant(Mat::column(query.to_vec()));
    let k = tape.constant(keys.clone());
    let v = tape.constant(values.clone());
    let (out, w) = attention_pool_on(&mut tape, q, k, v, &vars, scaled)?;
    Ok(Pooled {
        output: tape.value(out).as_slice().to_vec(),
        weights: tape.value(w).as_slice().to_vec(),
    })
}

fn head_on(tape: &mut Tape, head: &DenseVars, first: Var, second: Var) -> Result<Var> {
    let joined = tape.vconcat(&[first, second])?;
    let pre = tape.matmul(head.weight, joined)?;
    let pre = tape.add(pre, head.bias)?;
    Ok(tape.tanh(pre))
}

fn apply_mask(tape: &mut Tape, out: Var, mask: Option<&[f64]>) -> Result<Var> {
    match mask {
        None => Ok(out),
        Some(m) => {
            let m = tape.constant(Mat::column(m.to_vec()));
            tape.mul(out, m)
        }
    }
}

/// Records `E(x) = tanh(W [E_a; E_C] + b)` and returns the `d x 1` node.
/// `mask` is an inverted-dropout mask (see [`dropout_mask`]).
pub fn encode_sample_on(
    tape: &mut Tape,
    vars: &EncoderVars,
    sample: &EmbeddedSample,
    mask: Option<&[f64]>,
) -> Result<Var> {
    sample.validate()?;
    let trigger = tape.constant(Mat::column(trigger_encoding(sample)?));
    let tokens = tape.constant(sample.tokens.clone());
    let (context, _) = attention_pool_on(
        tape,
        trigger,
        tokens,
        tokens,
        &vars.sample_attention,
        vars.scaled_attention,
    )?;
    let out = head_on(tape, &vars.sample_head, trigger, context)?;
    apply_mask(tape, out, mask)
}

/// Records `h_t = tanh(W [E_a^D; E_C^D] + b)` for one frame.
pub fn encode_knowledge_on(
    tape: &mut Tape,
    vars: &EncoderVars,
    frame: &FrameKnowledge,
    mask: Option<&[f64]>,
) -> Result<Var> {
    frame.validate()?;
    let sentinel = tape.constant(Mat::column(frame.sentinel()));
    let lus = tape.constant(frame.lu_tokens.clone());
    let (trigger, _) = attention_pool_on(tape, sentinel, lus, lus, &vars.lu_attention, vars.scaled_attention)?;
    let arguments = tape.constant(frame.argument_encodings()?);
    let (context, _) = attention_pool_on(
        tape,
        trigger,
        arguments,
        arguments,
        &vars.argument_attention,
        vars.scaled_attention,
    )?;
    let out = head_on(tape, &vars.knowledge_head, trigger, context)?;
    apply_mask(tape, out, mask)
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`. A zero rate consumes no randomness.
pub fn dropout_mask(rng: &mut RngState, d: usize, rate: f64) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; d];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..d).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect()
}

pub fn encode_sample(
    sample: &EmbeddedSample,
    params: &EncoderParams,
    rng: &mut RngState,
    training: bool,
) -> Result<Vec<f64>> {
    let mask = training.then(|| dropout_mask(rng, params.dims.d, params.dropout_rate));
    let mut tape = Tape::new();
    let vars = EncoderVars::constants(&mut tape, params);
    let out = encode_sample_on(&mut tape, &vars, sample, mask.as_deref())?;
    Ok(tape.value(out).as_slice().to_vec())
}

pub fn encode_knowledge(
    frame: &FrameKnowledge,
    params: &EncoderParams,
    rng: &mut RngState,
    training: bool,
) -> Result<Vec<f64>> {
    let mask = training.then(|| dropout_mask(rng, params.dims.d, params.dropout_rate));
    let mut tape = Tape::new();
    let vars = EncoderVars::constants(&mut tape, params);
    let out = encode_knowledge_on(&mut tape, &vars, frame, mask.as_deref())?;
    Ok(tape.value(out).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: Vec<Vec<f64>>, start: usize, end: usize) -> EmbeddedSample {
        EmbeddedSample {
            token_ids: (0..rows.len() as u32).collect(),
            tokens: Mat::from_rows(&rows).unwrap(),
            trigger: Span::new(start, end),
            label: None,
        }
    }

    #[test]
    fn trigger_encoding_examples() {
        let s = sample(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]], 1, 1);
        assert_eq!(trigger_encoding(&s).unwrap(), vec![0.0, 1.0]);
        let s = sample(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 0, 1);
        assert_eq!(trigger_encoding(&s).unwrap(), vec![0.5, 0.5]);
        let s = sample(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]], 0, 2);
        assert_eq!(trigger_encoding(&s).unwrap(), vec![3.0, 2.0]);
        let bad = sample(vec![vec![1.0, 2.0]], 0, 1);
        assert!(matches!(trigger_encoding(&bad), Err(Error::Input(_))));
    }

    fn proj(d: usize) -> AttentionProjection {
        let mut rng = RngState::new(3);
        AttentionProjection::init(&mut rng, d, d, d)
    }

    #[test]
    fn single_key_returns_projected_value() {
        let p = proj(2);
        let keys = Mat::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let pooled = attention_pool(&[1.0, 2.0], &keys, &keys, &p, false).unwrap();
        assert_eq!(pooled.weights, vec![1.0]);
        let expected: Vec<f64> = p
            .value
            .matvec(&[0.3, -0.7])
            .unwrap()
            .into_iter()
            .map(f64::tanh)
            .collect();
        for (a, b) in pooled.output.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let p = proj(2);
        let keys = Mat::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let values = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 2.0]]).unwrap();
        let pooled = attention_pool(&[0.2, -0.1], &keys, &values, &p, false).unwrap();
        for w in &pooled.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let projected: Vec<Vec<f64>> = values
            .row_iter()
            .map(|r| p.value.matvec(r).unwrap().into_iter().map(f64::tanh).collect())
            .collect();
        let mean = linalg::mean_of(projected.iter().map(|v| v.as_slice())).unwrap();
        for (a, b) in pooled.output.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_keys_are_rejected() {
        let p = proj(2);
        let empty = Mat::zeros(0, 2);
        assert!(matches!(
            attention_pool(&[1.0, 0.0], &empty, &empty, &p, false),
            Err(Error::Input(_))
        ));
    }

    fn frame(spans: Vec<Vec<Span>>) -> FrameKnowledge {
        FrameKnowledge {
            event_type: "t".into(),
            definition_ids: vec![0, 1, 2],
            definition_tokens: Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![4.0, 4.0]]).unwrap(),
            argument_spans: spans,
            lu_ids: vec![3, 4],
            lu_tokens: Mat::from_rows(&[vec![0.5, 0.1], vec![-0.2, 0.3]]).unwrap(),
            match_kind: MatchKind::Exact,
        }
    }

    #[test]
    fn repeated_mentions_do_not_change_argument_encoding() {
        let once = frame(vec![vec![Span::new(0, 1)]]);
        let twice = frame(vec![vec![Span::new(0, 1), Span::new(0, 1)]]);
        assert_eq!(once.argument_encodings().unwrap(), twice.argument_encodings().unwrap());
        let params = EncoderParams::init(
            EncoderDims {
                d_emb: 2,
                d_att: 2,
                d: 3,
            },
            0.0,
            &mut RngState::new(1),
        );
        let mut rng = RngState::new(0);
        assert_eq!(
            encode_knowledge(&once, &params, &mut rng, false).unwrap(),
            encode_knowledge(&twice, &params, &mut rng, false).unwrap()
        );
    }

    #[test]
    fn frame_validation() {
        assert!(frame(vec![]).validate().is_err());
        assert!(frame(vec![vec![]]).validate().is_err());
        assert!(frame(vec![vec![Span::new(2, 3)]]).validate().is_err());
        let mut f = frame(vec![vec![Span::new(0, 0)]]);
        f.lu_tokens = Mat::zeros(0, 2);
        assert!(f.validate().is_err());
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let dims = EncoderDims {
            d_emb: 2,
            d_att: 3,
            d: 4,
        };
        let params = EncoderParams::zeros(dims);
        let mut rng = RngState::new(0);
        let s = sample(vec![vec![1.0, 2.0], vec![3.0, 4.0]], 0, 0);
        assert_eq!(encode_sample(&s, &params, &mut rng, false).unwrap(), vec![0.0; 4]);
        let f = frame(vec![vec![Span::new(1, 2)]]);
        assert_eq!(encode_knowledge(&f, &params, &mut rng, false).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn outputs_share_dimension_and_are_pure_without_dropout() {
        let dims = EncoderDims {
            d_emb: 2,
            d_att: 3,
            d: 5,
        };
        let params = EncoderParams::init(dims, 0.5, &mut RngState::new(8));
        params.validate().unwrap();
        let s = sample(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, 1.0]], 1, 2);
        let f = frame(vec![vec![Span::new(1, 2)], vec![Span::new(0, 0)]]);
        let mut rng = RngState::new(0);
        let a = encode_sample(&s, &params, &mut rng, false).unwrap();
        let b = encode_sample(&s, &params, &mut rng, false).unwrap();
        let h = encode_knowledge(&f, &params, &mut rng, false).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(h.len(), 5);
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(rng.position(), 0, "inference draws no randomness");
    }

    #[test]
    fn dropout_zeroes_or_rescales() {
        let dims = EncoderDims {
            d_emb: 2,
            d_att: 2,
            d: 64,
        };
        let params = EncoderParams::init(dims, 0.5, &mut RngState::new(8));
        let s = sample(vec![vec![1.0, 2.0], vec![3.0, 4.0]], 0, 1);
        let clean = encode_sample(&s, &params, &mut RngState::new(0), false).unwrap();
        let dropped = encode_sample(&s, &params, &mut RngState::new(0), true).unwrap();
        let mut zeros = 0;
        for (c, d) in clean.iter().zip(&dropped) {
            if *d == 0.0 {
                zeros += 1;
            } else {
                assert!((d - 2.0 * c).abs() < 1e-15);
            }
        }
        assert!(zeros > 10 && zeros < 54, "{zeros} of 64 dropped");
        assert_eq!(dropout_mask(&mut RngState::new(1), 3, 0.0), vec![1.0; 3]);
    }

    fn m(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(rows).unwrap()
    }

    // Hand-set d = 2 parameters; the expected numbers below come from a
    // separate straight-line numpy evaluation of the same formulas.
    fn hand_params() -> EncoderParams {
        let attention = AttentionProjection {
            query: m(&[&[0.5, -0.3], &[0.2, 0.8]]),
            key: m(&[&[1.0, 0.4], &[-0.6, 0.3]]),
            value: m(&[&[0.7, 0.1], &[-0.2, 0.9]]),
        };
        EncoderParams {
            dims: EncoderDims {
                d_emb: 2,
                d_att: 2,
                d: 2,
            },
            sample_attention: attention.clone(),
            lu_attention: attention,
            argument_attention: AttentionProjection {
                query: m(&[&[0.9, 0.1], &[-0.4, 0.6]]),
                key: m(&[&[0.3, 0.3], &[0.7, -0.2]]),
                value: m(&[&[-0.5, 0.8], &[0.4, 0.4]]),
            },
            sample_head: Dense {
                weight: m(&[&[0.3, -0.2, 0.5, 0.1], &[-0.4, 0.6, 0.2, -0.3]]),
                bias: Mat::column(vec![0.05, -0.1]),
            },
            knowledge_head: Dense {
                weight: m(&[&[0.2, 0.7, -0.3, 0.4], &[0.6, -0.1, 0.5, 0.2]]),
                bias: Mat::column(vec![0.0, 0.1]),
            },
            dropout_rate: 0.0,
            scaled_attention: false,
        }
    }

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() < tol, "{actual:?} vs {expected:?}");
        }
    }

    #[test]
    fn hand_set_attention() {
        let p = hand_params().sample_attention;
        let keys = m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, -0.5]]);
        let values = m(&[&[2.0, 1.0], &[-1.0, 0.5], &[0.0, -2.0]]);
        let pooled = attention_pool(&[0.4, -1.0], &keys, &values, &p, false).unwrap();
        assert_close(
            &pooled.weights,
            &[0.44397539083990845, 0.2232695996327564, 0.3327550095273352],
            1e-12,
        );
        assert_close(&pooled.output, &[0.20854939866824587, 0.017750726133037575], 1e-12);
    }

    #[test]
    fn hand_set_sample_encoding() {
        let s = sample(vec![vec![1.0, 0.0], vec![0.2, 0.6], vec![-0.5, 1.5]], 1, 2);
        let out = encode_sample(&s, &hand_params(), &mut RngState::new(0), false).unwrap();
        assert_close(&out, &[-0.1130985884289779, 0.40956342058780637], 1e-12);
    }

    #[test]
    fn hand_set_knowledge_encoding() {
        let f = FrameKnowledge {
            event_type: "t".into(),
            definition_ids: vec![0, 1, 2],
            definition_tokens: m(&[&[0.5, 1.0], &[1.5, -0.5], &[-1.0, 0.3]]),
            argument_spans: vec![vec![Span::new(0, 1)]],
            lu_ids: vec![3, 4],
            lu_tokens: m(&[&[0.2, 0.4], &[-0.3, 0.9]]),
            match_kind: MatchKind::Exact,
        };
        let out = encode_knowledge(&f, &hand_params(), &mut RngState::new(0), false).unwrap();
        assert_close(&out, &[0.5626960705104137, 0.008898334991216677], 1e-12);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        use crate::numerics::finite_diff::{finite_difference_grad, max_relative_error, DEFAULT_STEP};
        use crate::numerics::rng::standard_normal_vector;
        let dims = EncoderDims {
            d_emb: 3,
            d_att: 2,
            d: 4,
        };
        let mut rng = RngState::new(21);
        let params = EncoderParams::init(dims, 0.0, &mut rng);
        let rand_rows = |rng: &mut RngState, n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| standard_normal_vector(rng, 3).unwrap()).collect()
        };
        let s = sample(rand_rows(&mut rng, 4), 1, 2);
        let f = FrameKnowledge {
            event_type: "t".into(),
            definition_ids: vec![0, 1, 2, 3],
            definition_tokens: Mat::from_rows(&rand_rows(&mut rng, 4)).unwrap(),
            argument_spans: vec![vec![Span::new(0, 1), Span::new(3, 3)], vec![Span::new(2, 2)]],
            lu_ids: vec![4, 5, 6],
            lu_tokens: Mat::from_rows(&rand_rows(&mut rng, 3)).unwrap(),
            match_kind: MatchKind::Exact,
        };
        let ws = standard_normal_vector(&mut rng, 4).unwrap();
        let wk = standard_normal_vector(&mut rng, 4).unwrap();
        let objective = |p: &EncoderParams| -> f64 {
            let mut r = RngState::new(0);
            let e = encode_sample(&s, p, &mut r, false).unwrap();
            let h = encode_knowledge(&f, p, &mut r, false).unwrap();
            linalg::dot(&e, &ws) + linalg::dot(&h, &wk)
        };

        let mut tape = Tape::new();
        let vars = EncoderVars::register(&mut tape, &params);
        let e = encode_sample_on(&mut tape, &vars, &s, None).unwrap();
        let h = encode_knowledge_on(&mut tape, &vars, &f, None).unwrap();
        let cs = tape.constant(Mat::column(ws.clone()));
        let ck = tape.constant(Mat::column(wk.clone()));
        let (a, b) = (tape.dot(e, cs).unwrap(), tape.dot(h, ck).unwrap());
        let loss = tape.add(a, b).unwrap();
        let grads = tape.backward(loss).unwrap();

        for (i, var) in vars.all().into_iter().enumerate() {
            let analytic = grads.wrt(var);
            let numeric = finite_difference_grad(
                |x| {
                    let mut probe = params.clone();
                    probe.tensors_mut()[i].as_mut_slice().copy_from_slice(x);
                    objective(&probe)
                },
                params.tensors()[i].as_slice(),
                DEFAULT_STEP,
            )
            .unwrap();
            let err = max_relative_error(analytic.as_slice(), &numeric);
            assert!(err < 1e-4, "tensor {i}: relative error {err}");
        }
    }
}
