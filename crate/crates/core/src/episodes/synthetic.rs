//! Synthetic benchmark with biased knowledge.
//!
//! Every type has a latent mean `μ_t` in embedding space. Trigger tokens
//! scatter around it; other sentence tokens come from a shared background
//! pool. Exact-matched types get a frame centred on `μ_t`. Super-ordinate
//! types come in sibling groups sharing one frame centred on a parent anchor
//! `P`, with each child at `μ_t = P + δ u_t`. The unit offsets `u_t` lean
//! towards one global direction, so a specialised type differs from its
//! generic frame in a consistent way.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::encoders::{EmbeddedSample, FrameKnowledge, MatchKind, Span};
use crate::error::{Error, Result};
use crate::numerics::linalg::{self, Mat};
use crate::numerics::rng::RngState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_types: usize,
    pub samples_per_type: usize,
    pub d_emb: usize,
    /// Standard deviation of trigger tokens around the type mean.
    pub sigma_within: f64,
    /// Standard deviation of frame tokens around the frame anchor.
    pub frame_sigma: f64,
    pub exact_fraction: f64,
    pub super_ordinate_fraction: f64,
    /// Distance from each super-ordinate child mean to its group anchor.
    pub delta: f64,
    /// Types sharing one super-ordinate frame.
    pub group_size: usize,
    /// Norm of the random part of each child offset relative to the shared
    /// direction (0 aligns them all).
    pub offset_spread: f64,
    /// Scale of type means and anchors.
    pub mean_scale: f64,
    pub background_vocab: usize,
    pub background_scale: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub definition_len: usize,
    pub lu_count: usize,
    pub argument_count: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_types: 88,
            samples_per_type: 20,
            d_emb: 16,
            sigma_within: 0.5,
            frame_sigma: 0.075,
            exact_fraction: 0.5,
            super_ordinate_fraction: 0.5,
            delta: 2.0,
            group_size: 2,
            offset_spread: 1.0,
            mean_scale: 0.25,
            background_vocab: 64,
            background_scale: 0.25,
            min_len: 6,
            max_len: 12,
            definition_len: 6,
            lu_count: 3,
            argument_count: 2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let fractions = [self.exact_fraction, self.super_ordinate_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions[0] + fractions[1] - 1.0).abs() > 1e-9 {
            return bad(format!("match fractions {fractions:?} must lie in [0, 1] and sum to 1"));
        }
        if !(self.sigma_within > 0.0) || !(self.frame_sigma > 0.0) {
            return bad(format!(
                "sigma_within {} and frame_sigma {} must be positive",
                self.sigma_within, self.frame_sigma
            ));
        }
        if !(self.delta >= 0.0)
            || !(self.offset_spread >= 0.0)
            || !(self.mean_scale >= 0.0)
            || !(self.background_scale >= 0.0)
        {
            return bad("delta, offset_spread, mean_scale and background_scale must be >= 0".into());
        }
        if self.n_types == 0 || self.samples_per_type == 0 || self.d_emb == 0 {
            return bad("n_types, samples_per_type and d_emb must be positive".into());
        }
        if self.group_size < 2 {
            return bad("super-ordinate groups need at least two types".into());
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return bad(format!(
                "sentence length range {}..={} must start at 2 or more",
                self.min_len, self.max_len
            ));
        }
        if self.background_vocab == 0 || self.lu_count == 0 || self.argument_count == 0 || self.definition_len < 2 {
            return bad("background_vocab, lu_count and argument_count must be positive, definition_len >= 2".into());
        }
        Ok(())
    }

    fn super_ordinate_count(&self) -> usize {
        let raw = (self.n_types as f64 * self.super_ordinate_fraction).round() as usize;
        raw.min(self.n_types) / self.group_size * self.group_size
    }
}

/// Latent structure behind a generated dataset, indexed like the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub type_means: Vec<Vec<f64>>,
    /// Centre of each type's frame tokens.
    pub frame_anchors: Vec<Vec<f64>>,
    pub match_kinds: Vec<MatchKind>,
    /// Sibling group of each super-ordinate type.
    pub groups: Vec<Option<usize>>,
    /// Common direction of child offsets.
    pub specialization: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub truth: SyntheticTruth,
}

enum Unit {
    Exact,
    Group,
}

struct Builder<'a> {
    config: &'a SyntheticConfig,
    rng: RngState,
    table: Vec<f64>,
    vocab: usize,
}

impl Builder<'_> {
    fn gaussian(&mut self, scale: f64) -> Vec<f64> {
        (0..self.config.d_emb)
            .map(|_| scale * self.rng.standard_normal())
            .collect()
    }

    fn token_near(&mut self, centre: &[f64], sigma: f64) -> u32 {
        let noise = self.gaussian(sigma);
        self.table.extend(centre.iter().zip(noise).map(|(c, z)| c + z));
        self.vocab += 1;
        (self.vocab - 1) as u32
    }

    fn frame(&mut self, centre: &[f64]) -> (Vec<u32>, Vec<Vec<Span>>, Vec<u32>) {
        let c = self.config;
        let definition: Vec<u32> = (0..c.definition_len)
            .map(|_| self.token_near(centre, c.frame_sigma))
            .collect();
        let lus: Vec<u32> = (0..c.lu_count)
            .map(|_| self.token_near(centre, c.frame_sigma))
            .collect();
        let arguments = (0..c.argument_count)
            .map(|_| {
                let len = self.rng.int_inclusive(1, 2);
                let start = self.rng.int_inclusive(0, c.definition_len - len);
                vec![Span::new(start, start + len - 1)]
            })
            .collect();
        (definition, arguments, lus)
    }
}

/// Builds a dataset and its latent truth from `config`; fully determined by
/// the config (including its seed).
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Synthetic> {
    config.validate()?;
    let mut b = Builder {
        config,
        rng: RngState::new(config.seed),
        table: Vec::new(),
        vocab: 0,
    };
    let d = config.d_emb;

    let direction = linalg::normalize(&b.gaussian(1.0));
    let n_super = config.super_ordinate_count();
    let mut units: Vec<Unit> = (0..n_super / config.group_size)
        .map(|_| Unit::Group)
        .chain((0..config.n_types - n_super).map(|_| Unit::Exact))
        .collect();
    b.rng.shuffle(&mut units);

    for _ in 0..config.background_vocab {
        let v = b.gaussian(config.background_scale);
        b.table.extend(v);
        b.vocab += 1;
    }

    let mut truth = SyntheticTruth {
        type_means: Vec::with_capacity(config.n_types),
        frame_anchors: Vec::with_capacity(config.n_types),
        match_kinds: Vec::with_capacity(config.n_types),
        groups: Vec::with_capacity(config.n_types),
        specialization: direction.clone(),
    };
    let mut registry = Vec::with_capacity(config.n_types);
    let mut frames = BTreeMap::new();
    let mut group_id = 0;
    for unit in &units {
        let anchor = b.gaussian(config.mean_scale);
        let (kind, members, group) = match unit {
            Unit::Exact => (MatchKind::Exact, 1, None),
            Unit::Group => {
                group_id += 1;
                (MatchKind::SuperOrdinate, config.group_size, Some(group_id - 1))
            }
        };
        let (definition_ids, argument_spans, lu_ids) = b.frame(&anchor);
        for _ in 0..members {
            let mean = match kind {
                MatchKind::Exact => anchor.clone(),
                MatchKind::SuperOrdinate => {
                    let jitter = b.gaussian(config.offset_spread / (d as f64).sqrt());
                    let offset = linalg::normalize(&linalg::add(&direction, &jitter));
                    linalg::add(&anchor, &linalg::scale(&offset, config.delta))
                }
            };
            let name = format!("type_{:03}", registry.len());
            frames.insert(
                name.clone(),
                FrameKnowledge {
                    event_type: name.clone(),
                    definition_ids: definition_ids.clone(),
                    definition_tokens: Mat::zeros(0, d),
                    argument_spans: argument_spans.clone(),
                    lu_ids: lu_ids.clone(),
                    lu_tokens: Mat::zeros(0, d),
                    match_kind: kind,
                },
            );
            registry.push(name);
            truth.type_means.push(mean);
            truth.frame_anchors.push(anchor.clone());
            truth.match_kinds.push(kind);
            truth.groups.push(group);
        }
    }

    let mut raw_samples = Vec::with_capacity(config.n_types * config.samples_per_type);
    for (t, name) in registry.iter().enumerate() {
        for _ in 0..config.samples_per_type {
            let len = b.rng.int_inclusive(config.min_len, config.max_len);
            let trigger_len = b.rng.int_inclusive(1, 2);
            let start = b.rng.int_inclusive(0, len - trigger_len);
            let mut ids = Vec::with_capacity(len);
            for j in 0..len {
                if (start..start + trigger_len).contains(&j) {
                    let mean = truth.type_means[t].clone();
                    ids.push(b.token_near(&mean, config.sigma_within));
                } else {
                    ids.push(b.rng.int_inclusive(0, config.background_vocab - 1) as u32);
                }
            }
            raw_samples.push((ids, Span::new(start, start + trigger_len - 1), name.clone()));
        }
    }

    let embeddings = Mat::from_vec(b.vocab, d, b.table)?;
    let gather = |ids: &[u32]| {
        let rows: Vec<&[f64]> = ids.iter().map(|&i| embeddings.row(i as usize)).collect();
        Mat::from_rows(&rows)
    };
    for frame in frames.values_mut() {
        frame.definition_tokens = gather(&frame.definition_ids)?;
        frame.lu_tokens = gather(&frame.lu_ids)?;
    }
    let samples = raw_samples
        .into_iter()
        .map(|(ids, trigger, label)| {
            Ok(EmbeddedSample {
                tokens: gather(&ids)?,
                token_ids: ids,
                trigger,
                label: Some(label),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Synthetic {
        dataset: Dataset {
            embeddings,
            samples,
            type_registry: registry,
            frames,
        },
        truth,
    })
}
