//! End-to-end run: ingest, calibrate, segment, features, fits, MI,
//! importance and cascade for every participant, then reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cascade::{self, Bands, CascadeConfig, CascadeResult, CascadeRow};
use crate::evidence::{self, EvidenceConfig, ImportanceReport};
use crate::features::{self, FeatureName, FeatureRow, FeatureTable, Outcome, ScalingRecord};
use crate::inference::{self, LogisticModel, PosteriorSamples, SamplerConfig};
use crate::information::{self, MiEstimate, MiMode, MiRow};
use crate::ingest::{IngestConfig, Session};
use crate::kinematics::{self, CalibrationConfig, CalibrationReport, HistogramConfig, SegmentConfig, SegmentedSession, SpeedHistogram};
use crate::report::{self, ImportanceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Calibrate,
    Segment,
    Features,
    Fit,
    Mi,
    Importance,
    Cascade,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Calibrate => "calibrate",
            Stage::Segment => "segment",
            Stage::Features => "features",
            Stage::Fit => "fit",
            Stage::Mi => "mi",
            Stage::Importance => "importance",
            Stage::Cascade => "cascade",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
#[error("{stage} stage failed{}: {source}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Stage,
    /// Participant and/or trial the failure belongs to.
    pub context: Option<String>,
    pub source: BoxError,
}

impl PipelineError {
    pub fn new(stage: Stage, context: Option<String>, source: impl Into<BoxError>) -> Self {
        Self { stage, context, source: source.into() }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

trait StageExt<T> {
    fn stage(self, stage: Stage, context: &str) -> Result<T>;
}

impl<T, E: Into<BoxError>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: Stage, context: &str) -> Result<T> {
        self.map_err(|e| PipelineError::new(stage, Some(context.to_owned()), e))
    }
}

/// Input files of one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantInput {
    pub id: String,
    pub gaze: PathBuf,
    pub keypoints: PathBuf,
    pub trials: PathBuf,
}

impl ParticipantInput {
    pub fn in_dir(id: &str, dir: &Path) -> Self {
        Self { id: id.to_owned(), gaze: dir.join("gaze.csv"), keypoints: dir.join("keypoints.csv"), trials: dir.join("trials.csv") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Either a directory holding `gaze.csv`, `keypoints.csv` and
    /// `trials.csv`, or one whose subdirectories each do.
    pub data_dir: Option<PathBuf>,
    /// Explicit inputs, used in addition to `data_dir`.
    pub participants: Vec<ParticipantInput>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub ingest: IngestConfig,
    pub calibration: CalibrationConfig,
    pub segment: SegmentConfig,
    pub histogram: HistogramConfig,
    pub sampler: SamplerConfig,
    pub evidence: EvidenceConfig,
    pub bands: Bands,
    pub mi_mode: MiMode,
    pub importance_outcome: Outcome,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            participants: Vec::new(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            ingest: IngestConfig::default(),
            calibration: CalibrationConfig::default(),
            segment: SegmentConfig::default(),
            histogram: HistogramConfig::default(),
            sampler: SamplerConfig::default(),
            evidence: EvidenceConfig::default(),
            bands: Bands::default(),
            mi_mode: MiMode::default(),
            importance_outcome: Outcome::Decision,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::new(Stage::Config, None, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).stage(Stage::Config, &path.display().to_string())?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }

    /// Participants in a stable order: explicit ones first, then data
    /// directories sorted by name.
    pub fn resolve_participants(&self) -> Result<Vec<ParticipantInput>> {
        let mut out = self.participants.clone();
        if let Some(dir) = &self.data_dir {
            let ctx = dir.display().to_string();
            if dir.join("gaze.csv").exists() {
                let id = dir.file_name().map_or("participant".into(), |n| n.to_string_lossy().into_owned());
                out.push(ParticipantInput::in_dir(&id, dir));
            } else {
                let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
                    .stage(Stage::Ingest, &ctx)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_dir() && p.join("gaze.csv").exists())
                    .collect();
                subdirs.sort();
                for d in subdirs {
                    let id = d.file_name().expect("directory entry has a name").to_string_lossy().into_owned();
                    out.push(ParticipantInput::in_dir(&id, &d));
                }
            }
        }
        if out.is_empty() {
            return Err(PipelineError::new(Stage::Config, None, "no participants configured"));
        }
        Ok(out)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Stage helpers, shared with the command-line tool
// ---------------------------------------------------------------------------

/// `posterior.json`: draws plus what is needed to rebuild the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorFile {
    pub participant_id: String,
    pub outcome: Outcome,
    pub scaling: ScalingRecord,
    pub sampler: SamplerConfig,
    pub samples: PosteriorSamples,
}

/// Model for `outcome` on the given (unscaled) rows, standardised with
/// `scaling`.
pub fn model_with_scaling(rows: &[FeatureRow], outcome: Outcome, scaling: &ScalingRecord) -> std::result::Result<LogisticModel, BoxError> {
    let feats: Vec<FeatureName> = scaling.names.iter().map(|n| n.parse()).collect::<std::result::Result<_, _>>()?;
    let x = rows
        .iter()
        .map(|r| feats.iter().enumerate().map(|(j, &f)| scaling.apply(j, r.value(f))).collect())
        .collect();
    let y = rows.iter().map(|r| r.outcome(outcome)).collect();
    Ok(LogisticModel::new(y, x, scaling.names.clone())?)
}

/// Standardised design for `features` and the matching logistic model.
pub fn design_model(rows: &[FeatureRow], outcome: Outcome, feats: &[FeatureName]) -> std::result::Result<LogisticModel, BoxError> {
    let design = features::build_design(rows, feats)?;
    let y = rows.iter().map(|r| r.outcome(outcome)).collect();
    let model = LogisticModel::from_design(y, &design)?;
    Ok(model)
}

pub fn fit_outcome(pid: &str, rows: &[FeatureRow], outcome: Outcome, feats: &[FeatureName], sampler: &SamplerConfig) -> Result<PosteriorFile> {
    let design = features::build_design(rows, feats).stage(Stage::Features, pid)?;
    let y = rows.iter().map(|r| r.outcome(outcome)).collect();
    let model = LogisticModel::from_design(y, &design).stage(Stage::Fit, pid)?;
    let samples = inference::sample_with_retry(&model, sampler).stage(Stage::Fit, &format!("{pid}, outcome {}", outcome.as_str()))?;
    Ok(PosteriorFile { participant_id: pid.to_owned(), outcome, scaling: design.scaling, sampler: sampler.clone(), samples })
}

pub fn mi_from_posterior(rows: &[FeatureRow], post: &PosteriorFile, mode: MiMode) -> Result<MiEstimate> {
    let ctx = format!("{}, outcome {}", post.participant_id, post.outcome.as_str());
    let model = model_with_scaling(rows, post.outcome, &post.scaling).stage(Stage::Mi, &ctx)?;
    let est = information::mi_model(&post.samples, &model, mode).stage(Stage::Mi, &ctx)?;
    Ok(est.labeled(post.outcome.as_str(), &post.scaling.names))
}

/// One participant's MI row; `correct` may be absent.
pub fn mi_row(
    pid: &str,
    rows: &[FeatureRow],
    decision: &PosteriorFile,
    task: &PosteriorFile,
    correct: Option<&PosteriorFile>,
    mode: MiMode,
) -> Result<MiRow> {
    let gd = mi_from_posterior(rows, decision, mode)?;
    let gt = mi_from_posterior(rows, task, mode)?;
    let gc = match correct {
        Some(c) => mi_from_posterior(rows, c, mode)?,
        None => MiEstimate { value_bits: f64::NAN, raw_bits: f64::NAN, ..gt.clone() },
    };
    let d: Vec<u8> = rows.iter().map(|r| r.decision).collect();
    let t: Vec<u8> = rows.iter().map(|r| r.task).collect();
    information::mi_report(pid, &gd, &gt, &gc, &d, &t).stage(Stage::Mi, pid)
}

pub fn importance_for(pid: &str, rows: &[FeatureRow], outcome: Outcome, sampler: &SamplerConfig, cfg: &EvidenceConfig) -> Result<ImportanceReport> {
    let model = design_model(rows, outcome, &FeatureName::ALL).stage(Stage::Importance, pid)?;
    evidence::loo_importance(&model, sampler, cfg).stage(Stage::Importance, pid)
}

pub fn cascade_for(pid: &str, rows: &[FeatureRow], cfg: &CascadeConfig) -> Result<CascadeResult> {
    let cong: Vec<u8> = rows.iter().map(|r| r.congruence).collect();
    let mse: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    cascade::cascade_test(pid, &cong, &mse, cfg).stage(Stage::Cascade, pid)
}

/// Ingest, calibrate and segment one participant.
pub fn segment_participant(input: &ParticipantInput, cfg: &PipelineConfig) -> Result<(Session, SegmentedSession)> {
    let session = Session::load(&input.id, &input.gaze, &input.keypoints, &input.trials, &cfg.ingest)
        .stage(Stage::Ingest, &format!("participant {}", input.id))?;
    let (calibrated, report) = kinematics::post_calibrate(&session, &cfg.calibration);
    let seg = kinematics::segment_session(&calibrated, report, &cfg.segment);
    if seg.trials.is_empty() {
        return Err(PipelineError::new(Stage::Segment, Some(format!("participant {}", input.id)), "no trial could be segmented"));
    }
    Ok((calibrated, seg))
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantReport {
    pub participant_id: String,
    pub n_trials: usize,
    pub excluded_trials: Vec<u32>,
    pub calibration: CalibrationReport,
    pub mi: MiRow,
    pub importance: ImportanceReport,
    pub cascade: CascadeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub config: PipelineConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub participants: Vec<ParticipantReport>,
    pub features: FeatureTable,
    pub histogram: SpeedHistogram,
    pub cascade_rows: Vec<CascadeRow>,
    pub manifest: Manifest,
}

struct Analysed {
    report: ParticipantReport,
    rows: Vec<FeatureRow>,
    speeds: Vec<f64>,
}

fn analyse(index: usize, input: &ParticipantInput, cfg: &PipelineConfig) -> Result<Analysed> {
    let pid = input.id.as_str();
    let (_, seg) = segment_participant(input, cfg)?;
    let (table, excluded) = features::extract_session(&seg, None);
    if table.rows.len() < 2 {
        return Err(PipelineError::new(Stage::Features, Some(format!("participant {pid}")), "fewer than 2 usable trials"));
    }
    let rows = table.rows;
    info!("{pid}: {} trials, {} excluded", rows.len(), excluded.len());

    let base = cfg.seed.wrapping_add(1000 * index as u64);
    let sampler = |offset: u64| SamplerConfig { seed: base.wrapping_add(offset), ..cfg.sampler.clone() };
    let fit = |o: Outcome, off: u64| fit_outcome(pid, &rows, o, &FeatureName::MI_SET, &sampler(off));
    let decision = fit(Outcome::Decision, 0)?;
    let task = fit(Outcome::Task, 1)?;
    let correct = fit(Outcome::Correct, 2)?;
    let mi = mi_row(pid, &rows, &decision, &task, Some(&correct), cfg.mi_mode)?;

    let ev = EvidenceConfig { seed: base, ..cfg.evidence.clone() };
    let importance = importance_for(pid, &rows, cfg.importance_outcome, &sampler(10), &ev)?;
    let cascade = cascade_for(pid, &rows, &CascadeConfig { sampler: sampler(100), bands: cfg.bands })?;

    Ok(Analysed {
        speeds: kinematics::session_speeds(&seg),
        report: ParticipantReport {
            participant_id: pid.to_owned(),
            n_trials: rows.len(),
            excluded_trials: excluded,
            calibration: seg.calibration.clone(),
            mi,
            importance,
            cascade,
        },
        rows,
    })
}

pub const OUTPUT_FILES: [&str; 9] = [
    "features.csv",
    "hist.csv",
    "hist.svg",
    "mi.csv",
    "mi.svg",
    "importance.csv",
    "importance.svg",
    "cascade.csv",
    "report.json",
];

pub fn mi_svg(rows: &[MiRow]) -> String {
    let groups: Vec<String> = rows.iter().map(|r| r.participant_id.clone()).collect();
    let series = ["gaze / decision", "gaze / task", "decision / task", "fraction correct"].map(String::from);
    let values: Vec<Vec<f64>> =
        rows.iter().map(|r| vec![r.mi_gaze_decision, r.mi_gaze_task, r.mi_decision_task, r.mean_correct]).collect();
    report::grouped_bars_svg("Mutual information per participant", "bits", &groups, &series, &values)
}

pub fn importance_svg(rows: &[ImportanceRow]) -> String {
    let mut groups: Vec<String> = Vec::new();
    let mut series: Vec<String> = Vec::new();
    for r in rows {
        if !groups.contains(&r.participant_id) {
            groups.push(r.participant_id.clone());
        }
        if !series.contains(&r.feature) {
            series.push(r.feature.clone());
        }
    }
    let mut values = vec![vec![f64::NAN; series.len()]; groups.len()];
    for r in rows {
        let g = groups.iter().position(|x| *x == r.participant_id).expect("collected above");
        let s = series.iter().position(|x| *x == r.feature).expect("collected above");
        values[g][s] = r.log10_odds;
    }
    report::grouped_bars_svg("Leave-one-feature-out importance", "log10 odds", &groups, &series, &values)
}

/// Run everything and write reports into `cfg.out_dir`.
pub fn run_all(cfg: &PipelineConfig) -> Result<AnalysisReport> {
    let inputs = cfg.resolve_participants()?;
    let results = crate::par::map_indexed(inputs.len(), |i| analyse(i, &inputs[i], cfg));
    let mut analysed = Vec::with_capacity(results.len());
    for r in results {
        analysed.push(r?);
    }

    let speeds: Vec<f64> = analysed.iter().flat_map(|a| a.speeds.iter().copied()).collect();
    let histogram = kinematics::speed_histogram(&speeds, &cfg.histogram);
    let features = FeatureTable { rows: analysed.iter().flat_map(|a| a.rows.iter().cloned()).collect() };
    let participants: Vec<ParticipantReport> = analysed.into_iter().map(|a| a.report).collect();
    let mi_rows: Vec<MiRow> = participants.iter().map(|p| p.mi.clone()).collect();
    let imp_rows: Vec<ImportanceRow> = participants
        .iter()
        .flat_map(|p| report::importance_rows(&p.participant_id, cfg.importance_outcome.as_str(), &p.importance))
        .collect();
    let probs: Vec<(String, f64)> = participants.iter().map(|p| (p.participant_id.clone(), p.cascade.p_cascade)).collect();
    let cascade_rows = cascade::cascade_report(&probs, &cfg.bands);

    let rep = |e: BoxError| PipelineError::new(Stage::Report, None, e);
    let mut feature_csv = Vec::new();
    features.write_csv(&mut feature_csv).map_err(|e| rep(e.into()))?;
    let mut files: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    files.insert("features.csv", feature_csv);
    files.insert("hist.csv", report::csv_string(&report::hist_rows(&histogram)).map_err(|e| rep(e.into()))?.into_bytes());
    files.insert("hist.svg", report::histogram_svg(&histogram, "Within-segment gaze speed").into_bytes());
    files.insert("mi.csv", report::csv_string(&mi_rows).map_err(|e| rep(e.into()))?.into_bytes());
    files.insert("mi.svg", mi_svg(&mi_rows).into_bytes());
    files.insert("importance.csv", report::csv_string(&imp_rows).map_err(|e| rep(e.into()))?.into_bytes());
    files.insert("importance.svg", importance_svg(&imp_rows).into_bytes());
    files.insert("cascade.csv", report::csv_string(&cascade_rows).map_err(|e| rep(e.into()))?.into_bytes());
    #[derive(Serialize)]
    struct ReportJson<'a> {
        config: &'a PipelineConfig,
        participants: &'a [ParticipantReport],
    }
    let json = serde_json::to_string_pretty(&ReportJson { config: cfg, participants: &participants }).map_err(|e| rep(e.into()))?;
    files.insert("report.json", json.into_bytes());

    let out = &cfg.out_dir;
    fs::create_dir_all(out).stage(Stage::Report, &out.display().to_string())?;
    let mut outputs = Vec::new();
    for name in OUTPUT_FILES {
        let bytes = &files[name];
        let path = out.join(name);
        fs::write(&path, bytes).stage(Stage::Report, &path.display().to_string())?;
        outputs.push(FileDigest { path: name.to_owned(), sha256: sha256_hex(bytes) });
    }
    let mut digests = Vec::new();
    for p in &inputs {
        for path in [&p.gaze, &p.keypoints, &p.trials] {
            let bytes = fs::read(path).stage(Stage::Report, &path.display().to_string())?;
            digests.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        }
    }
    let manifest = Manifest {
        tool: "gaze2afc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.hash(),
        config: cfg.clone(),
        inputs: digests,
        outputs,
    };
    let mpath = out.join("manifest.json");
    let mjson = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    fs::write(&mpath, mjson).stage(Stage::Report, &mpath.display().to_string())?;

    Ok(AnalysisReport { participants, features, histogram, cascade_rows, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_toml_roundtrip() {
        let cfg = PipelineConfig { seed: 7, data_dir: Some("data".into()), ..Default::default() };
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let partial = PipelineConfig::from_toml("seed = 3\n[segment]\nthreshold_deg_s = 120.0\n").unwrap();
        assert_eq!(partial.segment.threshold_deg_s, 120.0);
        assert_eq!(partial.ingest.p_cutoff, 0.9);
    }

    #[test]
    fn missing_trials_names_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let out = crate::synth::gen_session(&crate::synth::SynthConfig { n_trials: 3, n_blocks: 1, ..Default::default() }).unwrap();
        let paths = out.write_dir(dir.path()).unwrap();
        fs::remove_file(&paths.trials).unwrap();
        let cfg = PipelineConfig { data_dir: Some(dir.path().into()), out_dir: dir.path().join("out"), ..Default::default() };
        let err = run_all(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Ingest);
        assert!(err.to_string().starts_with("ingest stage failed"), "{err}");
    }

    #[test]
    fn no_participants_is_config_error() {
        let err = PipelineConfig::default().resolve_participants().unwrap_err();
        assert_eq!(err.stage, Stage::Config);
    }
}
