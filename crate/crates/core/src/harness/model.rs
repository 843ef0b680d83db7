//! Trainable parameters and the versioned parameter file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ConfigEcho, RunConfig};
use crate::encoders::{EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::linalg::Mat;
use crate::numerics::rng::RngState;
use crate::prior::GateParams;

pub const PARAM_FORMAT: &str = "akbml-params";
pub const PARAM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub gate: GateParams,
}

impl ModelParams {
    pub fn init(config: &RunConfig, rng: &mut RngState) -> Self {
        let mut encoder = EncoderParams::init(config.dims(), config.dropout, rng);
        encoder.scaled_attention = config.scaled_attention;
        ModelParams {
            encoder,
            gate: GateParams::init(config.d, rng),
        }
    }

    pub fn zeros(dims: EncoderDims) -> Self {
        ModelParams {
            encoder: EncoderParams::zeros(dims),
            gate: GateParams::zeros(dims.d),
        }
    }

    pub fn tensors(&self) -> Vec<&Mat> {
        let mut all = self.encoder.tensors();
        all.push(&self.gate.weight);
        all.push(&self.gate.bias);
        all
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut all = self.encoder.tensors_mut();
        all.push(&mut self.gate.weight);
        all.push(&mut self.gate.bias);
        all
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters concatenated in [`ModelParams::tensors`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    /// Overwrites every parameter from a [`ModelParams::to_flat`] vector.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.len()
            )));
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    /// Shapes must match `config`'s dimensions.
    pub fn check_against(&self, config: &RunConfig) -> Result<()> {
        if self.encoder.dims != config.dims() || self.gate.dim() != config.d {
            return Err(Error::Dimension(format!(
                "parameters have dims {:?} (gate {}), config asks for {:?}",
                self.encoder.dims,
                self.gate.dim(),
                config.dims()
            )));
        }
        self.encoder.validate()?;
        self.gate.validate()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamFile {
    format: String,
    version: u32,
    config: ConfigEcho,
    params: ModelParams,
}

pub fn save_params(path: &Path, params: &ModelParams, config: &RunConfig) -> Result<()> {
    let file = ParamFile {
        format: PARAM_FORMAT.into(),
        version: PARAM_VERSION,
        config: config.into(),
        params: params.clone(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_param_file(path: &Path) -> Result<ParamFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ParamFile =
        serde_json::from_str(&text).map_err(|e| Error::ParamFile(format!("{}: {e}", path.display())))?;
    if file.format != PARAM_FORMAT {
        return Err(Error::ParamFile(format!(
            "{}: not a parameter file ({})",
            path.display(),
            file.format
        )));
    }
    if file.version != PARAM_VERSION {
        return Err(Error::ParamFile(format!(
            "{}: version {} unsupported (expected {PARAM_VERSION})",
            path.display(),
            file.version
        )));
    }
    Ok(file)
}

/// Reads a parameter file and checks it against the active config. Returns
/// the parameters and the config they were trained with.
pub fn load_params(path: &Path, config: &RunConfig) -> Result<(ModelParams, RunConfig)> {
    let file = read_param_file(path)?;
    file.params.check_against(config)?;
    Ok((file.params, file.config.into_config()))
}

/// The config echoed in a parameter file, without any dimension check.
pub fn param_file_config(path: &Path) -> Result<RunConfig> {
    Ok(read_param_file(path)?.config.into_config())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let config = RunConfig {
            d: 4,
            d_att: 3,
            d_emb: 2,
            ..Default::default()
        };
        let p = ModelParams::init(&config, &mut RngState::new(0));
        let mut q = ModelParams::zeros(config.dims());
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p.to_flat(), q.to_flat());
        assert!(q.set_flat(&[0.0]).is_err());
    }

    #[test]
    fn param_file_round_trip_and_dimension_check() {
        let config = RunConfig::default();
        let p = ModelParams::init(&config, &mut RngState::new(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_params(&path, &p, &config).unwrap();
        let (q, echo) = load_params(&path, &config).unwrap();
        assert_eq!(p, q);
        assert_eq!(echo, config);

        let other = RunConfig {
            d: 8,
            ..Default::default()
        };
        assert!(matches!(load_params(&path, &other), Err(Error::Dimension(_))));
        std::fs::write(&path, "{}").unwrap();
        assert!(matches!(load_params(&path, &config), Err(Error::ParamFile(_))));
    }
}
