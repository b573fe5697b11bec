use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Policy};
use super::trial::{estimate_error, TrialContext};
use super::HarnessError;

/// Configuration field varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SweepParam {
    Observations,
    SnrDb,
    Antennas,
    Blocklength,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Observations => "observations",
            SweepParam::SnrDb => "snr-db",
            SweepParam::Antennas => "antennas",
            SweepParam::Blocklength => "blocklength",
        })
    }
}

impl FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "observations" => Ok(SweepParam::Observations),
            "snr-db" | "snr_db" => Ok(SweepParam::SnrDb),
            "antennas" => Ok(SweepParam::Antennas),
            "blocklength" => Ok(SweepParam::Blocklength),
            other => Err(HarnessError::Config(format!("unknown sweep parameter '{other}'"))),
        }
    }
}

impl TryFrom<String> for SweepParam {
    type Error = HarnessError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SweepParam> for String {
    fn from(p: SweepParam) -> Self {
        p.to_string()
    }
}

fn positive_integer(param: SweepParam, value: f64) -> Result<u32, HarnessError> {
    if value >= 1.0 && value.fract() == 0.0 && value <= f64::from(u32::MAX) {
        Ok(value as u32)
    } else {
        Err(HarnessError::Config(format!(
            "{param} needs a positive integer, got {value}"
        )))
    }
}

impl SweepParam {
    /// Copy of `base` with this parameter set to `value`. Blocklength sweeps
    /// move `N_max` along with `N`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = base.clone();
        match self {
            SweepParam::Observations => cfg.observations = positive_integer(self, value)?,
            SweepParam::SnrDb => cfg.snr_db = value,
            SweepParam::Antennas => cfg.antennas = positive_integer(self, value)?,
            SweepParam::Blocklength => {
                cfg.blocklength = positive_integer(self, value)?;
                cfg.max_blocklength = None;
            }
        }
        Ok(cfg)
    }
}

/// One experiment cell. Serialized field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub param: String,
    pub value: Option<f64>,
    pub policy: String,
    pub bits: u32,
    pub rate: f64,
    pub error: f64,
    pub ci95: f64,
    pub pred_exact: f64,
    pub pred_bound: f64,
    pub trials: usize,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "param,value,policy,bits,rate,error,ci95,pred_exact,pred_bound,trials,seed";

/// Decide the rate for `cfg.policy` and simulate `cfg.trials` trials.
pub fn simulate(cfg: &ExperimentConfig, param: &str, value: Option<f64>) -> Result<ResultRow, HarnessError> {
    let params = cfg.build_params()?;
    let decision = cfg.decide(cfg.policy, &params)?;
    let ctx = TrialContext::new(&params, &decision, cfg.noise_model)?;
    let est = estimate_error(&ctx, cfg.trials, cfg.seed)?;
    Ok(ResultRow {
        param: param.to_string(),
        value,
        policy: cfg.policy.to_string(),
        bits: decision.bits_per_feature,
        rate: decision.rounded_rate,
        error: est.error,
        ci95: est.ci95,
        pred_exact: decision.predicted_exact,
        pred_bound: decision.predicted_bound,
        trials: est.trials,
        seed: cfg.seed,
    })
}

/// Every (value, policy) cell in value-major order. All cells share the
/// master seed.
pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    policies: &[Policy],
) -> Result<Vec<ResultRow>, HarnessError> {
    if values.is_empty() || policies.is_empty() {
        return Err(HarnessError::Config(
            "sweep needs at least one value and one policy".into(),
        ));
    }
    let mut rows = Vec::with_capacity(values.len() * policies.len());
    for &value in values {
        for &policy in policies {
            let cell = || -> Result<ResultRow, HarnessError> {
                let mut cfg = param.apply(base, value)?;
                cfg.policy = policy;
                simulate(&cfg, &param.to_string(), Some(value))
            };
            rows.push(cell().map_err(|e| HarnessError::Cell {
                param: param.to_string(),
                value,
                policy: policy.to_string(),
                source: Box::new(e),
            })?);
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::Io("<csv>".into(), e.to_string()))?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>, HarnessError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(HarnessError::from))
        .collect()
}
