//! Datasets, frames and N-way-M-shot episode sampling.

mod io;
mod synthetic;

use std::collections::BTreeMap;

use crate::encoders::{EmbeddedSample, FrameKnowledge, MatchKind};
use crate::error::{Error, Result};
use crate::numerics::linalg::Mat;
use crate::numerics::rng::RngState;
use crate::prior::Mode;

pub use io::{load_dataset, save_dataset, DatasetPaths};
pub use synthetic::{generate_synthetic, Synthetic, SyntheticConfig, SyntheticTruth};

/// Labeled samples, the ordered type registry and one frame per type.
///
/// Registry order is canonical: episode types and predicted labels follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Token embedding table, `vocab x d_emb`.
    pub embeddings: Mat,
    pub samples: Vec<EmbeddedSample>,
    pub type_registry: Vec<String>,
    pub frames: BTreeMap<String, FrameKnowledge>,
}

impl Dataset {
    pub fn empty(d_emb: usize) -> Self {
        Dataset {
            embeddings: Mat::zeros(0, d_emb),
            samples: Vec::new(),
            type_registry: Vec::new(),
            frames: BTreeMap::new(),
        }
    }

    pub fn d_emb(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.type_registry.iter().position(|t| t == name)
    }

    pub fn frame(&self, type_index: usize) -> Option<&FrameKnowledge> {
        self.frames.get(&self.type_registry[type_index])
    }

    pub fn match_kind(&self, type_index: usize) -> Option<MatchKind> {
        self.frame(type_index).map(|f| f.match_kind)
    }

    /// Sample indices grouped by registry position.
    pub fn samples_by_type(&self) -> Result<Vec<Vec<usize>>> {
        let lookup: BTreeMap<&str, usize> = self
            .type_registry
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let mut groups = vec![Vec::new(); self.type_registry.len()];
        for (i, s) in self.samples.iter().enumerate() {
            let label = s
                .label
                .as_deref()
                .ok_or_else(|| Error::Input(format!("sample {i} is unlabeled")))?;
            let t = lookup
                .get(label)
                .ok_or_else(|| Error::Input(format!("sample {i} has unregistered type {label}")))?;
            groups[*t].push(i);
        }
        Ok(groups)
    }

    /// Checks labels, spans and frames. Knowledge modes need a frame for
    /// every registered type.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        self.samples_by_type()?;
        for s in &self.samples {
            s.validate()?;
        }
        for f in self.frames.values() {
            f.validate()?;
        }
        if mode.uses_knowledge() {
            if let Some(t) = self.type_registry.iter().find(|t| !self.frames.contains_key(*t)) {
                return Err(Error::Input(format!(
                    "type {t} has no frame; {mode} mode needs one per type"
                )));
            }
        }
        Ok(())
    }

    /// The sub-dataset over `types` (in the given order), keeping only their
    /// samples and frames. The embedding table is shared unchanged.
    pub fn restrict(&self, types: &[String]) -> Result<Dataset> {
        for t in types {
            if self.type_index(t).is_none() {
                return Err(Error::Input(format!("unknown type {t}")));
            }
        }
        let keep: std::collections::BTreeSet<&str> = types.iter().map(String::as_str).collect();
        Ok(Dataset {
            embeddings: self.embeddings.clone(),
            samples: self
                .samples
                .iter()
                .filter(|s| s.label.as_deref().is_some_and(|l| keep.contains(l)))
                .cloned()
                .collect(),
            type_registry: types.to_vec(),
            frames: self
                .frames
                .iter()
                .filter(|(k, _)| keep.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        })
    }
}

/// One few-shot task over a dataset. Indices refer to the dataset it was
/// sampled from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    /// Registry indices of `T_S`, ascending.
    pub types: Vec<usize>,
    pub support: Vec<usize>,
    /// Position in `types` of each support sample's label.
    pub support_labels: Vec<usize>,
    pub query: Vec<usize>,
    pub query_labels: Vec<usize>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.types.len()
    }
}

/// Draws `n` types uniformly, then `m` support and `q_per_type` query
/// samples per type without replacement.
pub fn sample_episode(dataset: &Dataset, n: usize, m: usize, q_per_type: usize, rng: &mut RngState) -> Result<Episode> {
    let by_type = dataset.samples_by_type()?;
    sample_episode_grouped(dataset, &by_type, n, m, q_per_type, rng)
}

/// [`sample_episode`] with the per-type grouping precomputed.
pub fn sample_episode_grouped(
    dataset: &Dataset,
    by_type: &[Vec<usize>],
    n: usize,
    m: usize,
    q_per_type: usize,
    rng: &mut RngState,
) -> Result<Episode> {
    if n == 0 || m == 0 {
        return Err(Error::Episode("episodes need n >= 1 and m >= 1".into()));
    }
    let registry = dataset.type_registry.len();
    if registry < n {
        return Err(Error::Episode(format!(
            "{n}-way episode from {registry} registered types"
        )));
    }
    let mut types = rng.sample_indices(registry, n);
    types.sort_unstable();

    let mut episode = Episode {
        types: types.clone(),
        support: Vec::with_capacity(n * m),
        support_labels: Vec::with_capacity(n * m),
        query: Vec::with_capacity(n * q_per_type),
        query_labels: Vec::with_capacity(n * q_per_type),
    };
    for (local, &t) in types.iter().enumerate() {
        let pool = &by_type[t];
        if pool.len() < m + q_per_type {
            return Err(Error::Episode(format!(
                "type {} has {} samples, episode needs {}",
                dataset.type_registry[t],
                pool.len(),
                m + q_per_type
            )));
        }
        let picks = rng.sample_indices(pool.len(), m + q_per_type);
        for (k, &p) in picks.iter().enumerate() {
            if k < m {
                episode.support.push(pool[p]);
                episode.support_labels.push(local);
            } else {
                episode.query.push(pool[p]);
                episode.query_labels.push(local);
            }
        }
    }
    Ok(episode)
}

/// Disjoint type lists for training, validation and test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles the registry and cuts it proportionally to `weights`
/// (train, validation, test). Each part keeps registry order.
pub fn split_types(dataset: &Dataset, weights: [usize; 3], rng: &mut RngState) -> Result<TypeSplit> {
    let total: usize = weights.iter().sum();
    if total == 0 {
        return Err(Error::Config("split weights sum to zero".into()));
    }
    let len = dataset.type_registry.len();
    let validation = (len * weights[1] + total / 2) / total;
    let test = (len * weights[2] + total / 2) / total;
    let train = len
        .checked_sub(validation + test)
        .ok_or_else(|| Error::Config(format!("cannot split {len} types by {weights:?}")))?;
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    let part = |range: std::ops::Range<usize>| {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| dataset.type_registry[i].clone())
            .collect::<Vec<_>>()
    };
    Ok(TypeSplit {
        train: part(0..train),
        validation: part(train..train + validation),
        test: part(train + validation..len),
    })
}
