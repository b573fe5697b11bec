//! Monte Carlo experiment engine: configuration, end-to-end trials, policy
//! sweeps with CSV output, and the self-check suite.

pub mod config;
pub mod sweep;
pub mod trial;
pub mod validate;

use std::path::PathBuf;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::gmm::ModelError;
use crate::numerics::NumericsError;
use crate::optimizer::OptimizerError;
use crate::quant::QuantError;

pub use config::{CovarianceSpec, ExperimentConfig, ModelFile, NoiseModel, Policy};
pub use sweep::{read_csv, simulate, sweep, write_csv, ResultRow, SweepParam, CSV_HEADER};
pub use trial::{ci95, estimate_error, run_trial, trial_rng, ErrorEstimate, TrialContext, TrialRecord};
pub use validate::{validate, Check, ValidationReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(PathBuf, String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("sweep cell {param}={value} policy {policy} failed: {source}")]
    Cell {
        param: String,
        value: f64,
        policy: String,
        source: Box<HarnessError>,
    },
}
