//! Run configuration and its flat TOML form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderDims;
use crate::episodes::SyntheticConfig;
use crate::error::{Error, Result};
use crate::posterior::{CMode, GradientMode, SgldConfig};
use crate::prior::Mode;

/// Keys of the embedded synthetic config carry this prefix in the flat file.
pub const SYNTHETIC_PREFIX: &str = "synthetic_";

/// Learning rate for the 300-episode synthetic benchmark runs. The default
/// rate barely moves the parameters in so few episodes.
pub const BENCHMARK_LEARNING_RATE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub n_way: usize,
    pub m_shot: usize,
    pub q_per_type: usize,
    pub d: usize,
    pub d_emb: usize,
    pub d_att: usize,
    /// Monte Carlo sample count `N_s`.
    pub n_samples: usize,
    pub epsilon: f64,
    pub langevin_steps: usize,
    pub c_mode: CMode,
    pub gradient_mode: GradientMode,
    /// Differentiate through the Langevin updates; when off, only the
    /// initialization carries gradient into the prototypes.
    pub backprop_through_sampler: bool,
    pub learning_rate: f64,
    pub dropout: f64,
    pub scaled_attention: bool,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    /// Type split weights (train, validation, test).
    pub split: [usize; 3],
    pub seed: u64,
    /// Directory with `corpus.jsonl`, `frames.jsonl` and `embeddings.txt`;
    /// the synthetic benchmark is generated when unset.
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    #[serde(skip)]
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Ake,
            n_way: 5,
            m_shot: 5,
            q_per_type: 5,
            d: 32,
            d_emb: 16,
            d_att: 16,
            n_samples: 10,
            epsilon: 0.01,
            langevin_steps: 5,
            c_mode: CMode::Exact,
            gradient_mode: GradientMode::Analytic,
            backprop_through_sampler: true,
            learning_rate: 1e-5,
            dropout: 0.5,
            scaled_attention: false,
            train_episodes: 300,
            eval_episodes: 200,
            split: [68, 10, 10],
            seed: 0,
            data_dir: None,
            out_dir: None,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            d_emb: self.d_emb,
            d_att: self.d_att,
            d: self.d,
        }
    }

    pub fn sgld(&self) -> SgldConfig {
        SgldConfig {
            epsilon: self.epsilon,
            steps: self.langevin_steps,
            n_chains: self.n_samples,
            gradient_mode: self.gradient_mode,
            c_mode: self.c_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_way", self.n_way),
            ("m_shot", self.m_shot),
            ("q_per_type", self.q_per_type),
            ("d", self.d),
            ("d_emb", self.d_emb),
            ("d_att", self.d_att),
            ("n_samples", self.n_samples),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.c_mode == CMode::PaperLiteral && !self.mode.uses_knowledge() {
            return Err(Error::Config(format!(
                "paper_literal c_mode needs a knowledge prior, {} mode has none",
                self.mode
            )));
        }
        self.sgld().validate()?;
        if self.data_dir.is_none() {
            self.synthetic.validate()?;
            if self.synthetic.d_emb != self.d_emb {
                return Err(Error::Config(format!(
                    "d_emb {} differs from synthetic_d_emb {}",
                    self.d_emb, self.synthetic.d_emb
                )));
            }
        }
        Ok(())
    }

    /// Flat key-value form: run keys plus `synthetic_`-prefixed generator keys.
    pub fn to_toml(&self) -> Result<String> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let synthetic = toml::Table::try_from(&self.synthetic).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in synthetic {
            table.insert(format!("{SYNTHETIC_PREFIX}{k}"), v);
        }
        toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses the flat form. Missing keys keep their defaults; unknown keys
    /// are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let (mut synthetic, mut run) = (toml::Table::new(), toml::Table::new());
        for (k, v) in table {
            match k.strip_prefix(SYNTHETIC_PREFIX) {
                Some(rest) => synthetic.insert(rest.to_string(), v),
                None => run.insert(k, v),
            };
        }
        let mut config: RunConfig = run
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.synthetic = synthetic
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("synthetic keys: {e}")))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Config as echoed in reports and parameter files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub run: RunConfig,
    pub synthetic: SyntheticConfig,
}

impl From<&RunConfig> for ConfigEcho {
    fn from(c: &RunConfig) -> Self {
        ConfigEcho {
            run: c.clone(),
            synthetic: c.synthetic.clone(),
        }
    }
}

impl ConfigEcho {
    pub fn into_config(self) -> RunConfig {
        RunConfig {
            synthetic: self.synthetic,
            ..self.run
        }
    }
}
