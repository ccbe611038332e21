//! Per-trial gaze features, binary outcomes and standardisation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Side, TrialRecord};
use crate::kinematics::{AnglePoint, GazeSegment, SegmentedSession};
use crate::stats;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("trial {0} has no gaze segments")]
    NoSegments(u32),
    #[error("feature `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("need at least 2 trials to standardise, got {0}")]
    TooFewTrials(usize),
    #[error("feature `{0}` contains non-finite values")]
    NonFinite(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown outcome `{0}`")]
    UnknownOutcome(String),
    #[error("features csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// The six gaze features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    DurationLeft,
    DurationRight,
    Saccades,
    First,
    Last,
    UpperLower,
}

impl FeatureName {
    pub const ALL: [FeatureName; 6] = [
        FeatureName::DurationLeft,
        FeatureName::DurationRight,
        FeatureName::Saccades,
        FeatureName::First,
        FeatureName::Last,
        FeatureName::UpperLower,
    ];

    /// Feature set of the mutual-information analysis: durations, saccade
    /// count, first and last fixation.
    pub const MI_SET: [FeatureName; 5] = [
        FeatureName::DurationLeft,
        FeatureName::DurationRight,
        FeatureName::Saccades,
        FeatureName::First,
        FeatureName::Last,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureName::DurationLeft => "duration_left",
            FeatureName::DurationRight => "duration_right",
            FeatureName::Saccades => "saccades",
            FeatureName::First => "first",
            FeatureName::Last => "last",
            FeatureName::UpperLower => "upper_lower",
        }
    }

    /// ±1 encoded side features are left unscaled.
    pub fn is_binary(self) -> bool {
        matches!(self, FeatureName::First | FeatureName::Last)
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureName {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self> {
        FeatureName::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim())
            .ok_or_else(|| FeatureError::UnknownFeature(s.to_owned()))
    }
}

/// Binary outcome variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Reported side, right = 1.
    Decision,
    /// Side of the natural stimulus, right = 1.
    Task,
    Correct,
    /// Last fixation on the chosen side.
    Congruence,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Decision => "decision",
            Outcome::Task => "task",
            Outcome::Correct => "correct",
            Outcome::Congruence => "congruence",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "decision" => Ok(Outcome::Decision),
            "task" => Ok(Outcome::Task),
            "correct" => Ok(Outcome::Correct),
            "congruence" => Ok(Outcome::Congruence),
            other => Err(FeatureError::UnknownOutcome(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeVector {
    pub decision: u8,
    pub task: u8,
    pub correct: u8,
}

impl OutcomeVector {
    pub fn from_trial(trial: &TrialRecord) -> Self {
        let decision = trial.response_side.as_binary();
        let task = trial.natural_side.as_binary();
        Self { decision, task, correct: u8::from(decision == task) }
    }
}

/// 1 when the last fixated side is the chosen side.
pub fn congruence(last_side: Side, decision: Side) -> u8 {
    u8::from(last_side == decision)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioFlag {
    Finite,
    /// Never below the pelvis; replaced by the session cap.
    Capped,
    /// Never above the pelvis; replaced by the session floor.
    Floored,
    /// No pelvis reference at all; set to 1.
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFeatures {
    pub trial_id: u32,
    pub duration_left: f64,
    pub duration_right: f64,
    /// Saccades between the two stimuli.
    pub n_saccades: usize,
    pub first_side: Side,
    pub last_side: Side,
    pub upper_frames: usize,
    pub lower_frames: usize,
    /// Time above the pelvis over time below. Provisional until
    /// [`finalize_ratios`] resolves zero counts.
    pub upper_lower_ratio: f64,
    pub ratio_flag: RatioFlag,
}

/// Linear interpolation of a track's vertical coordinate over missing
/// frames, held constant past the first/last observation.
pub fn interpolate_y(track: &[Option<AnglePoint>]) -> Vec<Option<f64>> {
    let known: Vec<(usize, f64)> = track.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p.y))).collect();
    if known.is_empty() {
        return vec![None; track.len()];
    }
    (0..track.len())
        .map(|i| {
            let k = known.partition_point(|&(j, _)| j < i);
            let y = match (k.checked_sub(1).map(|a| known[a]), known.get(k)) {
                (_, Some(&(j, y))) if j == i => y,
                (Some((j0, y0)), Some(&(j1, y1))) => y0 + (y1 - y0) * (i - j0) as f64 / (j1 - j0) as f64,
                (Some((_, y0)), None) => y0,
                (None, Some(&(_, y1))) => y1,
                (None, None) => unreachable!(),
            };
            Some(y)
        })
        .collect()
}

/// Reduce a trial's segments to its feature vector.
///
/// `pelvis` holds the window-indexed pelvis keypoint of the left and right
/// avatar; `first_frame` is the absolute index of window frame 0.
pub fn extract_features(
    segments: &[GazeSegment],
    trial: &TrialRecord,
    pelvis: [&[Option<AnglePoint>]; 2],
    first_frame: usize,
) -> Result<TrialFeatures> {
    let (Some(first), Some(last)) = (segments.first(), segments.last()) else {
        return Err(FeatureError::NoSegments(trial.trial_id));
    };
    let duration = |side: Side| segments.iter().filter(|s| s.side == side).map(|s| s.duration).sum::<f64>();
    let n_saccades = segments.windows(2).filter(|w| w[0].side != w[1].side).count();

    let pelvis_y = [interpolate_y(pelvis[0]), interpolate_y(pelvis[1])];
    let (mut upper, mut lower) = (0usize, 0usize);
    for seg in segments {
        let ys = &pelvis_y[usize::from(seg.side == Side::Right)];
        for p in &seg.trajectory {
            if let Some(Some(py)) = p.frame.checked_sub(first_frame).and_then(|k| ys.get(k)) {
                // Image y grows downward.
                if p.y < *py {
                    upper += 1;
                } else {
                    lower += 1;
                }
            }
        }
    }
    let (ratio, flag) = match (upper, lower) {
        (0, 0) => (1.0, RatioFlag::Undefined),
        (_, 0) => (f64::INFINITY, RatioFlag::Capped),
        (0, _) => (0.0, RatioFlag::Floored),
        (u, l) => (u as f64 / l as f64, RatioFlag::Finite),
    };

    Ok(TrialFeatures {
        trial_id: trial.trial_id,
        duration_left: duration(Side::Left),
        duration_right: duration(Side::Right),
        n_saccades,
        first_side: first.side,
        last_side: last.side,
        upper_frames: upper,
        lower_frames: lower,
        upper_lower_ratio: ratio,
        ratio_flag: flag,
    })
}

/// Replace zero-denominator ratios by the 99th percentile of the finite
/// ratios and zero-numerator ratios by the 1st percentile, so the log
/// transform stays finite.
pub fn finalize_ratios(features: &mut [TrialFeatures]) {
    let finite: Vec<f64> = features
        .iter()
        .filter(|f| f.ratio_flag == RatioFlag::Finite)
        .map(|f| f.upper_lower_ratio)
        .collect();
    let (floor, cap) = if finite.is_empty() {
        (1.0, 1.0)
    } else {
        (stats::quantile(&finite, 0.01), stats::quantile(&finite, 0.99))
    };
    for f in features {
        match f.ratio_flag {
            RatioFlag::Capped => f.upper_lower_ratio = cap,
            RatioFlag::Floored => f.upper_lower_ratio = floor,
            RatioFlag::Undefined => f.upper_lower_ratio = 1.0,
            RatioFlag::Finite => {}
        }
    }
}

/// One row of `features.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub participant_id: String,
    pub trial_id: u32,
    pub block: u32,
    pub duration_left: f64,
    pub duration_right: f64,
    pub n_saccades: usize,
    /// -1 left, +1 right.
    pub first_side: i8,
    pub last_side: i8,
    pub upper_lower_ratio: f64,
    pub ratio_flag: RatioFlag,
    pub mse: f64,
    pub decision: u8,
    pub task: u8,
    pub correct: u8,
    pub congruence: u8,
}

impl FeatureRow {
    pub fn new(trial: &TrialRecord, f: &TrialFeatures) -> Self {
        let o = OutcomeVector::from_trial(trial);
        Self {
            participant_id: trial.participant_id.clone(),
            trial_id: trial.trial_id,
            block: trial.block,
            duration_left: f.duration_left,
            duration_right: f.duration_right,
            n_saccades: f.n_saccades,
            first_side: f.first_side.sign() as i8,
            last_side: f.last_side.sign() as i8,
            upper_lower_ratio: f.upper_lower_ratio,
            ratio_flag: f.ratio_flag,
            mse: trial.mse,
            decision: o.decision,
            task: o.task,
            correct: o.correct,
            congruence: congruence(f.last_side, trial.response_side),
        }
    }

    /// Model input value; the ratio enters on a log scale.
    pub fn value(&self, feature: FeatureName) -> f64 {
        match feature {
            FeatureName::DurationLeft => self.duration_left,
            FeatureName::DurationRight => self.duration_right,
            FeatureName::Saccades => self.n_saccades as f64,
            FeatureName::First => f64::from(self.first_side),
            FeatureName::Last => f64::from(self.last_side),
            FeatureName::UpperLower => self.upper_lower_ratio.ln(),
        }
    }

    pub fn outcome(&self, outcome: Outcome) -> u8 {
        match outcome {
            Outcome::Decision => self.decision,
            Outcome::Task => self.task,
            Outcome::Correct => self.correct,
            Outcome::Congruence => self.congruence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<FeatureRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Rows grouped by participant, in participant order then file order.
    pub fn by_participant(&self) -> BTreeMap<String, Vec<FeatureRow>> {
        let mut out: BTreeMap<String, Vec<FeatureRow>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(r.participant_id.clone()).or_default().push(r.clone());
        }
        out
    }
}

/// Features and outcome rows for every segmentable trial of a session.
/// `trials` overrides the trial records embedded in the segmentation when
/// given (matched by id). Returns the table and the excluded trial ids.
pub fn extract_session(seg: &SegmentedSession, trials: Option<&[TrialRecord]>) -> (FeatureTable, Vec<u32>) {
    let mut feats = Vec::new();
    let mut excluded: Vec<u32> = seg.skipped.iter().map(|(id, _)| *id).collect();
    for t in &seg.trials {
        let record = trials
            .and_then(|ts| ts.iter().find(|r| r.trial_id == t.trial.trial_id))
            .unwrap_or(&t.trial);
        match extract_features(&t.segments, record, [t.tracks.pelvis(Side::Left), t.tracks.pelvis(Side::Right)], t.first_frame) {
            Ok(f) => feats.push((record.clone(), f)),
            Err(e) => {
                warn!("participant {}: {e}; excluded", seg.participant_id);
                excluded.push(t.trial.trial_id);
            }
        }
    }
    let mut only: Vec<TrialFeatures> = feats.iter().map(|(_, f)| f.clone()).collect();
    finalize_ratios(&mut only);
    let rows = feats.iter().zip(&only).map(|((r, _), f)| FeatureRow::new(r, f)).collect();
    if !excluded.is_empty() {
        warn!("participant {}: {} trials excluded", seg.participant_id, excluded.len());
    }
    (FeatureTable { rows }, excluded)
}

// ---------------------------------------------------------------------------
// Standardisation
// ---------------------------------------------------------------------------

/// Scale a column to zero mean and unit (population) variance.
pub fn standardize_column(name: &str, col: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    if col.len() < 2 {
        return Err(FeatureError::TooFewTrials(col.len()));
    }
    if col.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite(name.to_owned()));
    }
    let m = stats::mean(col);
    let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
    if sd <= 1e-12 * (1.0 + m.abs()) {
        return Err(FeatureError::ZeroVariance(name.to_owned()));
    }
    Ok((col.iter().map(|v| (v - m) / sd).collect(), m, sd))
}

/// Per-column transform `z = (y - center) / scale`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub names: Vec<String>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Constant columns removed before fitting.
    pub dropped: Vec<String>,
}

impl ScalingRecord {
    pub fn apply(&self, j: usize, y: f64) -> f64 {
        (y - self.center[j]) / self.scale[j]
    }

    /// Map `(alpha, beta)` fitted on scaled columns to original units.
    pub fn to_original(&self, params: &[f64]) -> Vec<f64> {
        let mut out = params.to_vec();
        for j in 0..self.names.len() {
            out[j + 1] = params[j + 1] / self.scale[j];
            out[0] -= params[j + 1] * self.center[j] / self.scale[j];
        }
        out
    }
}

/// Model-ready design: row-major standardised features.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub rows: Vec<Vec<f64>>,
    pub scaling: ScalingRecord,
}

impl DesignMatrix {
    pub fn names(&self) -> &[String] {
        &self.scaling.names
    }
}

/// Standardise continuous columns; binary columns pass through with
/// `center = 0, scale = 1`. Constant columns are dropped with a warning.
pub fn standardize(names: &[String], binary: &[bool], columns: &[Vec<f64>]) -> Result<DesignMatrix> {
    let n = columns.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(FeatureError::TooFewTrials(n));
    }
    let mut scaling = ScalingRecord::default();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for ((name, &is_binary), col) in names.iter().zip(binary).zip(columns) {
        match standardize_column(name, col) {
            Ok((z, m, sd)) => {
                scaling.names.push(name.clone());
                if is_binary {
                    scaling.center.push(0.0);
                    scaling.scale.push(1.0);
                    kept.push(col.clone());
                } else {
                    scaling.center.push(m);
                    scaling.scale.push(sd);
                    kept.push(z);
                }
            }
            Err(e @ FeatureError::ZeroVariance(_)) => {
                warn!("{e}; dropped");
                scaling.dropped.push(name.clone());
            }
            Err(e) => return Err(e),
        }
    }
    let rows = (0..n).map(|i| kept.iter().map(|c| c[i]).collect()).collect();
    Ok(DesignMatrix { rows, scaling })
}

/// Standardised design for the chosen features of one participant's rows.
pub fn build_design(rows: &[FeatureRow], features: &[FeatureName]) -> Result<DesignMatrix> {
    let names: Vec<String> = features.iter().map(|f| f.as_str().to_owned()).collect();
    let binary: Vec<bool> = features.iter().map(|f| f.is_binary()).collect();
    let columns: Vec<Vec<f64>> = features.iter().map(|&f| rows.iter().map(|r| r.value(f)).collect()).collect();
    standardize(&names, &binary, &columns)
}
