//! Gaze-cascade test: regress last-fixation congruence on standardised MSE
//! and report the posterior probability that the slope is negative.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureError};
use crate::inference::{self, InferenceError, LogisticModel, PosteriorSamples, SamplerConfig};
use crate::stats;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("no trials; refusing to report the prior as a result")]
    NoTrials,
    #[error("{0} congruence values but {1} MSE values")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("unknown classification `{0}`")]
    UnknownClass(String),
}

pub type Result<T> = std::result::Result<T, CascadeError>;

/// Probability bands for reading `p(beta_MSE < 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bands {
    /// Above this the effect is present.
    pub effect_above: f64,
    /// Below this the effect is absent.
    pub absent_below: f64,
}

impl Default for Bands {
    fn default() -> Self {
        Self { effect_above: 0.85, absent_below: 0.15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    EffectPresent,
    EffectAbsent,
    Inconclusive,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::EffectPresent => "effect present",
            Classification::EffectAbsent => "effect absent",
            Classification::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Classification {
    type Err = CascadeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "effect present" => Ok(Classification::EffectPresent),
            "effect absent" => Ok(Classification::EffectAbsent),
            "inconclusive" => Ok(Classification::Inconclusive),
            other => Err(CascadeError::UnknownClass(other.to_owned())),
        }
    }
}

pub fn classify(p_cascade: f64, bands: &Bands) -> Classification {
    if p_cascade > bands.effect_above {
        Classification::EffectPresent
    } else if p_cascade < bands.absent_below {
        Classification::EffectAbsent
    } else {
        Classification::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub sampler: SamplerConfig,
    pub bands: Bands,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
}

impl ParamSummary {
    fn of(col: &[f64]) -> Self {
        Self {
            mean: stats::mean(col),
            sd: stats::std_dev(col),
            q05: stats::quantile(col, 0.05),
            q95: stats::quantile(col, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeResult {
    pub participant_id: String,
    pub p_cascade: f64,
    pub n_trials: usize,
    pub alpha: ParamSummary,
    /// On the standardised MSE scale.
    pub beta_mse: ParamSummary,
    pub mse_center: f64,
    pub mse_scale: f64,
}

/// Fraction of draws with parameter `j` below zero.
pub fn p_negative(samples: &PosteriorSamples, j: usize) -> f64 {
    let n = samples.n_draws();
    if n == 0 {
        return f64::NAN;
    }
    samples.draws().filter(|d| d[j] < 0.0).count() as f64 / n as f64
}

pub fn cascade_test(participant_id: &str, congruence: &[u8], mse: &[f64], cfg: &CascadeConfig) -> Result<CascadeResult> {
    if congruence.is_empty() {
        return Err(CascadeError::NoTrials);
    }
    if congruence.len() != mse.len() {
        return Err(CascadeError::LengthMismatch(congruence.len(), mse.len()));
    }
    let (z, center, scale) = features::standardize_column("mse", mse)?;
    let model = LogisticModel::new(congruence.to_vec(), z.into_iter().map(|v| vec![v]).collect(), vec!["mse".into()])?;
    let samples = inference::sample_with_retry(&model, &cfg.sampler)?;
    Ok(summarize(participant_id, &samples, model.n_trials(), center, scale))
}

fn summarize(participant_id: &str, samples: &PosteriorSamples, n_trials: usize, center: f64, scale: f64) -> CascadeResult {
    CascadeResult {
        participant_id: participant_id.to_owned(),
        p_cascade: p_negative(samples, 1),
        n_trials,
        alpha: ParamSummary::of(&samples.column(0)),
        beta_mse: ParamSummary::of(&samples.column(1)),
        mse_center: center,
        mse_scale: scale,
    }
}

/// One row of the probability table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeRow {
    pub participant: String,
    /// Four decimals.
    pub p_gaze_cascade: String,
    pub classification: Classification,
}

pub fn cascade_report(results: &[(String, f64)], bands: &Bands) -> Vec<CascadeRow> {
    results
        .iter()
        .map(|(id, p)| CascadeRow {
            participant: id.clone(),
            p_gaze_cascade: format!("{p:.4}"),
            classification: classify(*p, bands),
        })
        .collect()
}
