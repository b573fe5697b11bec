use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::channel::ChannelConfig;
use crate::gmm::InferenceModel;
use crate::optimizer::{
    adaptive_rate, brute_force_exact, fixed_bits_rate, urllc_rate, OptimizerSettings, RateDecision, TradeoffParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKeyword {
    Identity,
}

/// Shared covariance: `"identity"`, a list of diagonal entries, or a dense
/// nested array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovarianceSpec {
    Keyword(CovarianceKeyword),
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        CovarianceSpec::Keyword(CovarianceKeyword::Identity)
    }
}

impl CovarianceSpec {
    pub fn to_matrix(&self, dim: usize) -> Result<DMatrix<f64>, HarnessError> {
        match self {
            CovarianceSpec::Keyword(CovarianceKeyword::Identity) => Ok(DMatrix::identity(dim, dim)),
            CovarianceSpec::Diagonal(diag) => {
                if diag.len() != dim {
                    return Err(HarnessError::Config(format!(
                        "diagonal has {} entries, expected {dim}",
                        diag.len()
                    )));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
            }
            CovarianceSpec::Dense(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(HarnessError::Config(format!("dense covariance must be {dim}x{dim}")));
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
            }
        }
    }
}

/// Contents of a `--model-file`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub sigma: CovarianceSpec,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.to_path_buf(), e.to_string()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_model(&self) -> Result<InferenceModel, HarnessError> {
        let dim = self.mu1.len();
        let sigma = self.sigma.to_matrix(dim)?;
        Ok(InferenceModel::new(
            DVector::from_column_slice(&self.mu1),
            DVector::from_column_slice(&self.mu2),
            sigma,
        )?)
    }
}

/// Rate-selection rule compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Policy {
    Adaptive,
    Brute,
    Urllc,
    Bits(u32),
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Adaptive => f.write_str("adaptive"),
            Policy::Brute => f.write_str("brute"),
            Policy::Urllc => f.write_str("urllc"),
            Policy::Bits(b) => write!(f, "bits:{b}"),
        }
    }
}

impl FromStr for Policy {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "adaptive" => Ok(Policy::Adaptive),
            "brute" => Ok(Policy::Brute),
            "urllc" => Ok(Policy::Urllc),
            other => other
                .strip_prefix("bits:")
                .and_then(|b| b.parse::<u32>().ok())
                .filter(|&b| b >= 1)
                .map(Policy::Bits)
                .ok_or_else(|| HarnessError::Config(format!("unknown policy '{other}'"))),
        }
    }
}

impl TryFrom<String> for Policy {
    type Error = HarnessError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Policy> for String {
    fn from(p: Policy) -> Self {
        p.to_string()
    }
}

/// How received features are distorted in a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Encode and decode through the transform quantizer.
    #[default]
    Quantizer,
    /// Add isotropic Gaussian noise of the predicted quantization variance.
    Lemma1,
}

/// One experiment. Field names double as the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub centroid_magnitude: f64,
    pub covariance: CovarianceSpec,
    /// Overrides `dim`, `centroid_magnitude` and `covariance` when set.
    pub model_file: Option<PathBuf>,
    pub clip: f64,
    pub antennas: u32,
    pub snr_db: f64,
    pub blocklength: u32,
    /// Defaults to `blocklength`.
    pub max_blocklength: Option<u32>,
    pub observations: u32,
    pub policy: Policy,
    pub trials: usize,
    pub seed: u64,
    pub noise_model: NoiseModel,
    pub urllc_threshold: f64,
    pub optimizer: OptimizerSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: 50,
            centroid_magnitude: 0.1,
            covariance: CovarianceSpec::default(),
            model_file: None,
            clip: 5.0,
            antennas: 4,
            snr_db: 2.0,
            blocklength: 100,
            max_blocklength: None,
            observations: 10,
            policy: Policy::Adaptive,
            trials: 10_000,
            seed: 2024,
            noise_model: NoiseModel::Quantizer,
            urllc_threshold: 1e-5,
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.to_path_buf(), e.to_string()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if self.observations == 0 {
            return Err(HarnessError::Config("observations must be at least 1".into()));
        }
        if self.model_file.is_none() && self.dim == 0 {
            return Err(HarnessError::Config("dim must be at least 1".into()));
        }
        if !(self.urllc_threshold > 0.0 && self.urllc_threshold < 1.0) {
            return Err(HarnessError::Config("urllc_threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<InferenceModel, HarnessError> {
        if let Some(path) = &self.model_file {
            return ModelFile::load(path)?.to_model();
        }
        let m = self.centroid_magnitude;
        Ok(InferenceModel::new(
            DVector::from_element(self.dim, m),
            DVector::from_element(self.dim, -m),
            self.covariance.to_matrix(self.dim)?,
        )?)
    }

    pub fn build_channel(&self) -> Result<ChannelConfig, HarnessError> {
        Ok(ChannelConfig::from_db(self.antennas, self.snr_db, self.blocklength)?)
    }

    pub fn build_params(&self) -> Result<TradeoffParams, HarnessError> {
        self.validate()?;
        let model = self.build_model()?;
        let channel = self.build_channel()?;
        let n_max = self.max_blocklength.unwrap_or(self.blocklength);
        Ok(TradeoffParams::with_max_blocklength(
            model,
            self.clip,
            channel,
            self.observations,
            n_max,
        )?)
    }

    /// Rate decision of `policy` under this configuration.
    pub fn decide(&self, policy: Policy, params: &TradeoffParams) -> Result<RateDecision, HarnessError> {
        Ok(match policy {
            Policy::Adaptive => adaptive_rate(params, &self.optimizer)?,
            Policy::Brute => brute_force_exact(params)?,
            Policy::Urllc => urllc_rate(params, self.urllc_threshold)?.decision,
            Policy::Bits(b) => fixed_bits_rate(b, params)?,
        })
    }
}
