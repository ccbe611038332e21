//! Mutual information between binary outcomes and gaze, from the fitted
//! regression and from 2x2 contingency tables.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{predictive_prob, LogisticModel, PosteriorSamples};
use crate::stats::sigmoid;

#[derive(Debug, Error, PartialEq)]
pub enum InformationError {
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no trials")]
    Empty,
    #[error("posterior failed the convergence gates")]
    NotConverged,
}

pub type Result<T> = std::result::Result<T, InformationError>;

/// `H_b(p)` in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(InformationError::OutOfRange(p));
    }
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    Ok(term(p) + term(1.0 - p))
}

fn entropy_clamped(p: f64) -> f64 {
    binary_entropy(p.clamp(0.0, 1.0)).unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiMethod {
    ModelPlugIn,
    Contingency,
}

/// How predictive probabilities enter the plug-in estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiMode {
    /// Plug in the posterior-mean probability for every trial.
    #[default]
    PosteriorMean,
    /// Evaluate the estimate per draw and average.
    DrawAveraged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Clamped to `[0, 1]`.
    pub value_bits: f64,
    /// Before clamping.
    pub raw_bits: f64,
    pub outcome_name: String,
    pub feature_set: Vec<String>,
    pub method: MiMethod,
    pub n_trials: usize,
}

impl MiEstimate {
    fn new(raw: f64, method: MiMethod, n_trials: usize) -> Self {
        if raw < -1e-9 {
            warn!("negative plug-in MI {raw:.4} bits clamped to 0");
        }
        Self {
            value_bits: raw.clamp(0.0, 1.0),
            raw_bits: raw,
            outcome_name: String::new(),
            feature_set: Vec::new(),
            method,
            n_trials,
        }
    }

    pub fn labeled(mut self, outcome: &str, features: &[String]) -> Self {
        self.outcome_name = outcome.to_owned();
        self.feature_set = features.to_vec();
        self
    }
}

/// Plug-in MI of the empirical joint of two binary vectors.
pub fn mi_contingency(x: &[u8], z: &[u8]) -> Result<MiEstimate> {
    if x.len() != z.len() {
        return Err(InformationError::LengthMismatch(x.len(), z.len()));
    }
    if x.is_empty() {
        return Err(InformationError::Empty);
    }
    let mut counts = [[0usize; 2]; 2];
    for (&a, &b) in x.iter().zip(z) {
        counts[usize::from(a != 0)][usize::from(b != 0)] += 1;
    }
    Ok(MiEstimate::new(mi_table(counts), MiMethod::Contingency, x.len()))
}

/// MI in bits of a 2x2 count table.
pub fn mi_table(counts: [[usize; 2]; 2]) -> f64 {
    let n: usize = counts.iter().flatten().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let row = [counts[0][0] + counts[0][1], counts[1][0] + counts[1][1]];
    let col = [counts[0][0] + counts[1][0], counts[0][1] + counts[1][1]];
    let mut mi = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let c = counts[a][b];
            if c == 0 {
                continue;
            }
            let pab = c as f64 / n;
            mi += pab * (pab * n * n / (row[a] as f64 * col[b] as f64)).log2();
        }
    }
    mi
}

/// `H_b(mean p) - mean H_b(p_i)` for per-trial success probabilities.
pub fn mi_from_probs(probs: &[f64]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let n = probs.len() as f64;
    let p_bar = probs.iter().sum::<f64>() / n;
    entropy_clamped(p_bar) - probs.iter().map(|&p| entropy_clamped(p)).sum::<f64>() / n
}

/// Model-based MI between the outcome and the model's features. Posteriors
/// that carry diagnostics must have passed the convergence gates.
pub fn mi_model(posterior: &PosteriorSamples, model: &LogisticModel, mode: MiMode) -> Result<MiEstimate> {
    if !posterior.diagnostics.rhat.is_empty() && !posterior.diagnostics.converged {
        return Err(InformationError::NotConverged);
    }
    if model.n_trials() == 0 {
        return Err(InformationError::Empty);
    }
    let raw = match mode {
        MiMode::PosteriorMean => {
            let probs: Vec<f64> = model.features.iter().map(|row| predictive_prob(posterior, row)).collect();
            mi_from_probs(&probs)
        }
        MiMode::DrawAveraged => {
            let mut probs = vec![0.0; model.n_trials()];
            let mut total = 0.0;
            let mut n = 0usize;
            for d in posterior.draws() {
                for (p, row) in probs.iter_mut().zip(&model.features) {
                    *p = sigmoid(d[0] + d[1..].iter().zip(row).map(|(b, y)| b * y).sum::<f64>());
                }
                total += mi_from_probs(&probs);
                n += 1;
            }
            if n == 0 { 0.0 } else { total / n as f64 }
        }
    };
    Ok(MiEstimate::new(raw, MiMethod::ModelPlugIn, model.n_trials()).labeled("", &model.feature_names))
}

/// One participant's bar group: gaze against each outcome, decision against
/// task, and the fraction of correct answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiRow {
    pub participant_id: String,
    pub n_trials: usize,
    pub mi_gaze_decision: f64,
    pub mi_gaze_task: f64,
    pub mi_gaze_correct: f64,
    pub mi_decision_task: f64,
    pub mean_correct: f64,
}

pub fn mi_report(
    participant_id: &str,
    gaze_decision: &MiEstimate,
    gaze_task: &MiEstimate,
    gaze_correct: &MiEstimate,
    decision: &[u8],
    task: &[u8],
) -> Result<MiRow> {
    let dt = mi_contingency(decision, task)?;
    let correct = decision.iter().zip(task).filter(|(a, b)| a == b).count();
    Ok(MiRow {
        participant_id: participant_id.to_owned(),
        n_trials: decision.len(),
        mi_gaze_decision: gaze_decision.value_bits,
        mi_gaze_task: gaze_task.value_bits,
        mi_gaze_correct: gaze_correct.value_bits,
        mi_decision_task: dt.value_bits,
        mean_correct: correct as f64 / decision.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(binary_entropy(0.25).unwrap(), 0.811_278, epsilon = 1e-6);
        assert_eq!(binary_entropy(1.5), Err(InformationError::OutOfRange(1.5)));
    }

    #[test]
    fn perfect_dependence_is_one_bit() {
        let x: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        assert_abs_diff_eq!(mi_contingency(&x, &x).unwrap().value_bits, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn table_value() {
        assert_abs_diff_eq!(mi_table([[40, 10], [10, 40]]), 0.278_072, epsilon = 1e-6);
    }

    #[test]
    fn independence_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
        let z: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
        assert!(mi_contingency(&x, &z).unwrap().value_bits < 0.02);
    }

    #[test]
    fn plug_in_limits() {
        assert_eq!(mi_from_probs(&[0.5; 10]), 0.0);
        let probs: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.001 } else { 0.999 }).collect();
        assert!(mi_from_probs(&probs) >= 0.95);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(mi_contingency(&[], &[]).unwrap_err(), InformationError::Empty);
        assert_eq!(mi_contingency(&[1], &[1, 0]).unwrap_err(), InformationError::LengthMismatch(1, 2));
    }

    #[test]
    fn perfect_performer_report() {
        let d: Vec<u8> = (0..50).map(|i| (i % 2) as u8).collect();
        let zero = MiEstimate::new(0.0, MiMethod::ModelPlugIn, 50);
        let row = mi_report("p", &zero, &zero, &zero, &d, &d).unwrap();
        assert_abs_diff_eq!(row.mi_decision_task, 1.0, epsilon = 1e-12);
        assert_eq!(row.mean_correct, 1.0);
    }

    proptest! {
        #[test]
        fn contingency_symmetric_and_bounded(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200)) {
            let x: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let z: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let a = mi_contingency(&x, &z).unwrap();
            let b = mi_contingency(&z, &x).unwrap();
            prop_assert_eq!(a.value_bits, b.value_bits);
            prop_assert!((0.0..=1.0).contains(&a.value_bits));
        }

        #[test]
        fn plug_in_bounded(probs in prop::collection::vec(0.0f64..=1.0, 1..100)) {
            let v = mi_from_probs(&probs);
            prop_assert!(v >= -1e-12 && v <= 1.0 + 1e-12);
        }
    }
}
