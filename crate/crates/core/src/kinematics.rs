//! Gaze kinematics: visual angle, block-wise post-calibration, angular speed,
//! saccade detection and per-avatar segmentation.

use std::ops::Range;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{BodyPart, Corner, Label, Session, Side, TrialRecord};
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("trial {0} has no scene frames within its presentation window")]
    EmptyTrialWindow(u32),
    #[error("block {0} has no valid gaze during inter-stimulus intervals")]
    NoIsiData(u32),
}

pub type Result<T> = std::result::Result<T, KinematicsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Horizontal/vertical visual angle in degrees relative to the image centre.
/// `y` grows downward, as in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnglePoint {
    pub x: f64,
    pub y: f64,
}

impl AnglePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &AnglePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Scene camera of the head-mounted tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraGeometry {
    pub width_px: f64,
    pub height_px: f64,
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
}

impl Default for CameraGeometry {
    fn default() -> Self {
        Self { width_px: 1280.0, height_px: 960.0, fov_h_deg: 60.0, fov_v_deg: 46.0 }
    }
}

impl CameraGeometry {
    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.width_px / 2.0, self.height_px / 2.0)
    }

    pub fn deg_per_px_x(&self) -> f64 {
        self.fov_h_deg / self.width_px
    }

    pub fn deg_per_px_y(&self) -> f64 {
        self.fov_v_deg / self.height_px
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        (0.0..self.width_px).contains(&p.x) && (0.0..self.height_px).contains(&p.y)
    }

    /// Linear mapping with one degrees-per-pixel scale per axis.
    pub fn px_to_deg(&self, p: PixelPoint) -> AnglePoint {
        let c = self.center();
        AnglePoint::new((p.x - c.x) * self.deg_per_px_x(), (p.y - c.y) * self.deg_per_px_y())
    }

    pub fn deg_to_px(&self, a: AnglePoint) -> PixelPoint {
        let c = self.center();
        PixelPoint::new(a.x / self.deg_per_px_x() + c.x, a.y / self.deg_per_px_y() + c.y)
    }

    /// Angular length of a pixel displacement.
    pub fn offset_deg(&self, dx_px: f64, dy_px: f64) -> f64 {
        (dx_px * self.deg_per_px_x()).hypot(dy_px * self.deg_per_px_y())
    }
}

pub fn px_to_deg(p: PixelPoint, geometry: &CameraGeometry) -> AnglePoint {
    geometry.px_to_deg(p)
}

// ---------------------------------------------------------------------------
// Post-calibration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Fixation period preceding each trial onset.
    pub isi_s: f64,
    /// Offsets smaller than this (degrees) are reported but not applied.
    pub gate_deg: f64,
    /// Fixation-cross position in scene pixels. Derived from the display
    /// corner marks when absent.
    pub fixation_cross_px: Option<PixelPoint>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { isi_s: 0.75, gate_deg: 0.5, fixation_cross_px: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOffset {
    pub block: u32,
    pub dx_px: f64,
    pub dy_px: f64,
    pub n_samples: usize,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub fixation_cross_px: Option<PixelPoint>,
    pub offsets: Vec<CalibrationOffset>,
    /// Blocks left uncalibrated for lack of ISI gaze.
    pub skipped_blocks: Vec<u32>,
}

/// Median over all frames of the centre of the four display corner marks.
pub fn fixation_cross_from_corners(session: &Session) -> Option<PixelPoint> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for f in &session.frames {
        let pts: Vec<_> = Corner::ALL.iter().filter_map(|&c| f.get(Label::Corner(c))).collect();
        if pts.len() == 4 {
            xs.push(pts.iter().map(|k| k.x_px).sum::<f64>() / 4.0);
            ys.push(pts.iter().map(|k| k.y_px).sum::<f64>() / 4.0);
        }
    }
    (!xs.is_empty()).then(|| PixelPoint::new(stats::median(&xs), stats::median(&ys)))
}

/// Block of each gaze sample: the block whose first ISI starts most recently
/// before the sample; samples before the first block belong to it.
fn block_of_samples(session: &Session, isi_s: f64) -> Vec<u32> {
    let mut starts: Vec<(f64, u32)> = Vec::new();
    for t in &session.trials {
        match starts.iter_mut().find(|(_, b)| *b == t.block) {
            Some(s) => s.0 = s.0.min(t.onset - isi_s),
            None => starts.push((t.onset - isi_s, t.block)),
        }
    }
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));
    session
        .gaze
        .iter()
        .map(|g| {
            let k = starts.partition_point(|s| s.0 <= g.timestamp);
            starts[k.saturating_sub(1)].1
        })
        .collect()
}

/// Estimate one offset per block as the median ISI gaze minus the fixation
/// cross, and subtract it from every sample of the block when its angular
/// size exceeds the gate.
pub fn post_calibrate(session: &Session, config: &CalibrationConfig) -> (Session, CalibrationReport) {
    let mut out = session.clone();
    let mut report = CalibrationReport::default();
    if session.trials.is_empty() || session.gaze.is_empty() {
        return (out, report);
    }
    let cross = config
        .fixation_cross_px
        .or_else(|| fixation_cross_from_corners(session))
        .unwrap_or_else(|| session.geometry.center());
    report.fixation_cross_px = Some(cross);

    let blocks = block_of_samples(session, config.isi_s);
    let mut block_ids: Vec<u32> = session.trials.iter().map(|t| t.block).collect();
    block_ids.sort_unstable();
    block_ids.dedup();

    for block in block_ids {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for trial in session.trials.iter().filter(|t| t.block == block) {
            let start = session.gaze.partition_point(|g| g.timestamp < trial.onset - config.isi_s);
            let end = session.gaze.partition_point(|g| g.timestamp < trial.onset);
            for g in &session.gaze[start..end] {
                if let Some(p) = g.usable_position() {
                    xs.push(p.x);
                    ys.push(p.y);
                }
            }
        }
        if xs.is_empty() {
            warn!("{}", KinematicsError::NoIsiData(block));
            report.skipped_blocks.push(block);
            continue;
        }
        let dx = stats::median(&xs) - cross.x;
        let dy = stats::median(&ys) - cross.y;
        let applied = session.geometry.offset_deg(dx, dy) > config.gate_deg;
        if applied {
            for (g, &b) in out.gaze.iter_mut().zip(&blocks) {
                if b == block {
                    if let Some(p) = g.position.as_mut() {
                        p.x -= dx;
                        p.y -= dy;
                    }
                    g.off_screen = g.position.is_some_and(|p| !session.geometry.contains(p));
                }
            }
        }
        report.offsets.push(CalibrationOffset { block, dx_px: dx, dy_px: dy, n_samples: xs.len(), applied });
    }
    (out, report)
}

// ---------------------------------------------------------------------------
// Speed and saccades
// ---------------------------------------------------------------------------

/// Gaze direction at one scene frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub frame: usize,
    /// Timestamp of the gaze sample aligned to the frame.
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl TrajPoint {
    pub fn angle(&self) -> AnglePoint {
        AnglePoint::new(self.x, self.y)
    }
}

/// Angular speed between consecutive frames, `speeds[i]` spanning frames `i`
/// and `i + 1`. The elapsed time is taken from the aligned gaze timestamps,
/// so uneven 60 Hz to 24 Hz pairing does not distort the estimate. Missing
/// frames give missing speeds.
pub fn gaze_speed(points: &[Option<TrajPoint>]) -> Result<Vec<Option<f64>>> {
    if points.len() < 2 {
        return Err(KinematicsError::TooFewSamples(points.len()));
    }
    Ok(points
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) if b.t > a.t => Some(a.angle().distance(&b.angle()) / (b.t - a.t)),
            _ => None,
        })
        .collect())
}

/// A run of consecutive above-threshold speeds, as inclusive speed indices.
/// The eye leaves frame `start` and lands on frame `end + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaccadeEvent {
    pub start: usize,
    pub end: usize,
}

impl SaccadeEvent {
    /// Frames strictly inside the saccade (possibly empty).
    pub fn interior_frames(&self) -> Range<usize> {
        self.start + 1..self.end + 1
    }
}

pub const DEFAULT_SACCADE_THRESHOLD: f64 = 100.0;

pub fn detect_saccades(speeds: &[Option<f64>], threshold_deg_s: f64) -> Vec<SaccadeEvent> {
    let mut events = Vec::new();
    let mut open: Option<usize> = None;
    for (i, s) in speeds.iter().enumerate() {
        let above = s.is_some_and(|v| v > threshold_deg_s);
        match (above, open) {
            (true, None) => open = Some(i),
            (false, Some(start)) => {
                events.push(SaccadeEvent { start, end: i - 1 });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        events.push(SaccadeEvent { start, end: speeds.len() - 1 });
    }
    events
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

/// Span of gaze directed at one avatar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeSegment {
    /// First and last frame, absolute scene frame indices.
    pub start_frame: usize,
    pub end_frame: usize,
    pub side: Side,
    pub trajectory: Vec<TrajPoint>,
    /// Number of gazed frames divided by the frame rate.
    pub duration: f64,
}

/// Per-frame avatar positions in degrees for one trial window.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AvatarTracks {
    /// Mean horizontal position of the avatar's present body keypoints,
    /// indexed `[left, right]`.
    pub centroid_x: [Vec<Option<f64>>; 2],
    pub pelvis: [Vec<Option<AnglePoint>>; 2],
    /// Display midline from the corner marks.
    pub midline_x: Vec<Option<f64>>,
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

impl AvatarTracks {
    pub fn from_session(session: &Session, frames: Range<usize>) -> Self {
        let geom = &session.geometry;
        let mut tracks = AvatarTracks::default();
        for f in &session.frames[frames] {
            for side in [Side::Left, Side::Right] {
                let xs: Vec<f64> = BodyPart::ALL
                    .iter()
                    .filter_map(|&p| f.get(Label::Body(side, p)))
                    .map(|k| geom.px_to_deg(k.point()).x)
                    .collect();
                tracks.centroid_x[side_index(side)].push((!xs.is_empty()).then(|| stats::mean(&xs)));
                tracks.pelvis[side_index(side)]
                    .push(f.get(Label::Body(side, BodyPart::Pelvis)).map(|k| geom.px_to_deg(k.point())));
            }
            let corners: Vec<_> = Corner::ALL.iter().filter_map(|&c| f.get(Label::Corner(c)).map(|k| (c, k))).collect();
            let has_left = corners.iter().any(|(c, _)| matches!(c, Corner::TopLeft | Corner::BottomLeft));
            let has_right = corners.iter().any(|(c, _)| matches!(c, Corner::TopRight | Corner::BottomRight));
            let mid = (has_left && has_right).then(|| {
                let xs: Vec<f64> = corners.iter().map(|(_, k)| geom.px_to_deg(k.point()).x).collect();
                stats::mean(&xs)
            });
            tracks.midline_x.push(mid);
        }
        tracks
    }

    pub fn pelvis(&self, side: Side) -> &[Option<AnglePoint>] {
        &self.pelvis[side_index(side)]
    }

    fn mean_centroid(&self, side: Side, frames: &[usize]) -> Option<f64> {
        let xs: Vec<f64> = frames.iter().filter_map(|&k| self.centroid_x[side_index(side)].get(k).copied().flatten()).collect();
        (!xs.is_empty()).then(|| stats::mean(&xs))
    }

    fn mean_midline(&self, frames: &[usize]) -> f64 {
        let xs: Vec<f64> = frames.iter().filter_map(|&k| self.midline_x.get(k).copied().flatten()).collect();
        if xs.is_empty() {
            0.0
        } else {
            stats::mean(&xs)
        }
    }
}

/// Side of a gaze episode: the avatar whose keypoint centroid is horizontally
/// nearest to the median gaze, ties to the left. Without keypoints for
/// both avatars, the display midline decides.
fn classify_side(median_x: f64, left: Option<f64>, right: Option<f64>, midline: f64) -> Side {
    match (left, right) {
        (Some(l), Some(r)) => {
            if (median_x - l).abs() <= (median_x - r).abs() {
                Side::Left
            } else {
                Side::Right
            }
        }
        _ => {
            if median_x > midline {
                Side::Right
            } else {
                Side::Left
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub threshold_deg_s: f64,
    pub frame_rate_hz: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { threshold_deg_s: DEFAULT_SACCADE_THRESHOLD, frame_rate_hz: 24.0 }
    }
}

/// Split a trial's per-frame gaze at saccades (and tracking gaps), label each
/// piece with an avatar side and merge consecutive pieces on the same side.
///
/// `gaze` and `tracks` are indexed by frame within the trial window.
pub fn segment_trajectory(
    gaze: &[Option<TrajPoint>],
    saccades: &[SaccadeEvent],
    tracks: &AvatarTracks,
    config: &SegmentConfig,
) -> Vec<GazeSegment> {
    let n = gaze.len();
    let mut interior = vec![false; n];
    let mut cut_before = vec![false; n + 1];
    for s in saccades {
        for k in s.interior_frames() {
            if k < n {
                interior[k] = true;
            }
        }
        cut_before[(s.end + 1).min(n)] = true;
    }

    let mut pieces: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for k in 0..n {
        if cut_before[k] || gaze[k].is_none() || interior[k] {
            if !current.is_empty() {
                pieces.push(std::mem::take(&mut current));
            }
        }
        if gaze[k].is_some() && !interior[k] {
            current.push(k);
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }

    let mut labelled: Vec<(Side, usize, usize)> = Vec::new();
    for piece in &pieces {
        let xs: Vec<f64> = piece.iter().map(|&k| gaze[k].unwrap().x).collect();
        let side = classify_side(
            stats::median(&xs),
            tracks.mean_centroid(Side::Left, piece),
            tracks.mean_centroid(Side::Right, piece),
            tracks.mean_midline(piece),
        );
        let (first, last) = (piece[0], *piece.last().unwrap());
        match labelled.last_mut() {
            Some((s, _, end)) if *s == side => *end = last,
            _ => labelled.push((side, first, last)),
        }
    }

    labelled
        .into_iter()
        .map(|(side, first, last)| {
            let trajectory: Vec<TrajPoint> = (first..=last).filter_map(|k| gaze[k]).collect();
            GazeSegment {
                start_frame: trajectory[0].frame,
                end_frame: trajectory.last().unwrap().frame,
                side,
                duration: trajectory.len() as f64 / config.frame_rate_hz,
                trajectory,
            }
        })
        .collect()
}

/// Classification of each frame in a trial window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameLabel {
    Segment(usize),
    Saccade,
    Gap,
}

/// Segmentation result for one trial, with what feature extraction needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSegmentation {
    pub trial: TrialRecord,
    pub first_frame: usize,
    /// Calibrated gaze per window frame, `None` for gaps.
    pub gaze: Vec<Option<TrajPoint>>,
    pub speeds: Vec<Option<f64>>,
    /// Saccade events in window-relative speed indices.
    pub saccades: Vec<SaccadeEvent>,
    pub segments: Vec<GazeSegment>,
    pub tracks: AvatarTracks,
}

impl TrialSegmentation {
    pub fn n_frames(&self) -> usize {
        self.gaze.len()
    }

    /// Every window frame is exactly one of segment, saccade or gap.
    pub fn frame_labels(&self) -> Vec<FrameLabel> {
        (0..self.gaze.len())
            .map(|k| {
                let frame = self.first_frame + k;
                if self.gaze[k].is_none() {
                    FrameLabel::Gap
                } else if let Some(i) =
                    self.segments.iter().position(|s| (s.start_frame..=s.end_frame).contains(&frame))
                {
                    FrameLabel::Segment(i)
                } else {
                    FrameLabel::Saccade
                }
            })
            .collect()
    }
}

/// Window gaze of a (calibrated) session as angular trajectory points.
pub fn window_gaze(session: &Session, frames: Range<usize>) -> Vec<Option<TrajPoint>> {
    frames
        .map(|f| session.frame_gaze(f).map(|(t, p)| {
            let a = session.geometry.px_to_deg(p);
            TrajPoint { frame: f, t, x: a.x, y: a.y }
        }))
        .collect()
}

pub fn segment_trial(session: &Session, trial: &TrialRecord, config: &SegmentConfig) -> Result<TrialSegmentation> {
    let frames = session.frames_in(trial.onset, trial.offset);
    if frames.is_empty() {
        return Err(KinematicsError::EmptyTrialWindow(trial.trial_id));
    }
    let gaze = window_gaze(session, frames.clone());
    let speeds = if gaze.len() >= 2 { gaze_speed(&gaze)? } else { Vec::new() };
    let saccades = detect_saccades(&speeds, config.threshold_deg_s);
    let tracks = AvatarTracks::from_session(session, frames.clone());
    let segments = segment_trajectory(&gaze, &saccades, &tracks, config);
    Ok(TrialSegmentation { trial: trial.clone(), first_frame: frames.start, gaze, speeds, saccades, segments, tracks })
}

/// `segments.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedSession {
    pub participant_id: String,
    pub config: SegmentConfig,
    pub calibration: CalibrationReport,
    pub trials: Vec<TrialSegmentation>,
    /// Trials that could not be segmented, with the reason.
    pub skipped: Vec<(u32, String)>,
}

/// Segment every trial of an already calibrated session.
pub fn segment_session(session: &Session, calibration: CalibrationReport, config: &SegmentConfig) -> SegmentedSession {
    let results = crate::par::map_indexed(session.trials.len(), |i| segment_trial(session, &session.trials[i], config));
    let mut trials = Vec::new();
    let mut skipped = Vec::new();
    for (t, r) in session.trials.iter().zip(results) {
        match r {
            Ok(seg) => trials.push(seg),
            Err(e) => {
                warn!("participant {}: {e}", session.participant_id);
                skipped.push((t.trial_id, e.to_string()));
            }
        }
    }
    SegmentedSession { participant_id: session.participant_id.clone(), config: *config, calibration, trials, skipped }
}

// ---------------------------------------------------------------------------
// Speed distribution
// ---------------------------------------------------------------------------

/// Speeds between adjacent gazed frames inside a segment, excluding
/// above-threshold (saccadic) steps.
pub fn within_segment_speeds(segment: &GazeSegment, threshold_deg_s: f64) -> Vec<f64> {
    segment
        .trajectory
        .windows(2)
        .filter(|w| w[1].frame == w[0].frame + 1 && w[1].t > w[0].t)
        .map(|w| w[0].angle().distance(&w[1].angle()) / (w[1].t - w[0].t))
        .filter(|&s| s <= threshold_deg_s)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramConfig {
    pub bin_width: f64,
    pub max_speed: f64,
    /// Gaussian KDE bandwidth; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
    pub kde_points: usize,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self { bin_width: 1.0, max_speed: 40.0, bandwidth: None, kde_points: 161 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `count / (n * width)`; integrates to the in-range fraction.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpeedHistogram {
    pub n: usize,
    pub bins: Vec<HistBin>,
    pub bandwidth: f64,
    /// `(speed, density)` pairs of the kernel density estimate.
    pub kde: Vec<(f64, f64)>,
}

impl SpeedHistogram {
    /// Bin with the largest count; first one on ties.
    pub fn mode_bin(&self) -> Option<&HistBin> {
        self.bins.iter().filter(|b| b.count > 0).fold(None, |best: Option<&HistBin>, b| match best {
            Some(m) if m.count >= b.count => Some(m),
            _ => Some(b),
        })
    }

    /// Bins strictly higher than both neighbours (plateaus count once).
    pub fn local_modes(&self) -> Vec<&HistBin> {
        let c: Vec<usize> = self.bins.iter().map(|b| b.count).collect();
        (0..c.len())
            .filter(|&i| c[i] > 0 && (i == 0 || c[i] > c[i - 1]) && (i + 1 == c.len() || c[i] >= c[i + 1]))
            .map(|i| &self.bins[i])
            .collect()
    }
}

pub fn silverman_bandwidth(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let sd = stats::std_dev(xs);
    let iqr = stats::quantile(xs, 0.75) - stats::quantile(xs, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (xs.len() as f64).powf(-0.2);
    (h > 0.0).then_some(h)
}

/// Normalised histogram over `[0, max_speed)` plus a Gaussian KDE.
pub fn speed_histogram(speeds: &[f64], config: &HistogramConfig) -> SpeedHistogram {
    let n_bins = (config.max_speed / config.bin_width).ceil() as usize;
    let finite: Vec<f64> = speeds.iter().copied().filter(|s| s.is_finite() && *s >= 0.0).collect();
    if finite.is_empty() {
        return SpeedHistogram::default();
    }
    let mut counts = vec![0usize; n_bins];
    for &s in &finite {
        let b = (s / config.bin_width).floor() as usize;
        if b < n_bins {
            counts[b] += 1;
        }
    }
    let n = finite.len();
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistBin {
            lo: i as f64 * config.bin_width,
            hi: (i + 1) as f64 * config.bin_width,
            count,
            density: count as f64 / (n as f64 * config.bin_width),
        })
        .collect();
    let h = config.bandwidth.or_else(|| silverman_bandwidth(&finite)).unwrap_or(config.bin_width / 2.0);
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let steps = config.kde_points.max(2) - 1;
    let kde = (0..=steps)
        .map(|i| {
            let x = config.max_speed * i as f64 / steps as f64;
            let d = finite.iter().map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>() * norm;
            (x, d)
        })
        .collect();
    SpeedHistogram { n, bins, bandwidth: h, kde }
}

/// Within-segment speeds of every trial in a segmented session.
pub fn session_speeds(seg: &SegmentedSession) -> Vec<f64> {
    seg.trials
        .iter()
        .flat_map(|t| t.segments.iter())
        .flat_map(|s| within_segment_speeds(s, seg.config.threshold_deg_s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn g() -> CameraGeometry {
        CameraGeometry::default()
    }

    #[test]
    fn center_maps_to_origin() {
        let a = px_to_deg(PixelPoint::new(640.0, 480.0), &g());
        assert_eq!(a, AnglePoint::new(0.0, 0.0));
    }

    #[test]
    fn right_edge_is_half_fov() {
        let a = px_to_deg(PixelPoint::new(1280.0, 480.0), &g());
        assert_abs_diff_eq!(a.x, 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn avatar_separation_in_pixels() {
        let a = px_to_deg(PixelPoint::new(640.0 + 341.3, 480.0), &g());
        assert_abs_diff_eq!(a.x, 16.0, epsilon = 0.01);
    }

    #[test]
    fn deg_px_roundtrip() {
        let p = PixelPoint::new(123.4, 777.7);
        let q = g().deg_to_px(g().px_to_deg(p));
        assert_abs_diff_eq!(p.x, q.x, epsilon = 1e-9);
        assert_abs_diff_eq!(p.y, q.y, epsilon = 1e-9);
    }

    fn tp(k: usize, t: f64, x: f64, y: f64) -> Option<TrajPoint> {
        Some(TrajPoint { frame: k, t, x, y })
    }

    #[test]
    fn speed_definition() {
        let s = gaze_speed(&[tp(0, 0.0, 0.0, 0.0), tp(1, 1.0 / 24.0, 1.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(s[0].unwrap(), 24.0, epsilon = 1e-9);
    }

    #[test]
    fn stationary_gaze_zero_speed() {
        let pts: Vec<_> = (0..10).map(|k| tp(k, k as f64 / 24.0, 3.0, -2.0)).collect();
        assert!(gaze_speed(&pts).unwrap().iter().all(|s| *s == Some(0.0)));
    }

    #[test]
    fn pursuit_ramp_speed() {
        let pts: Vec<_> = (0..84).map(|k| tp(k, k as f64 / 24.0, 3.0 * k as f64 / 24.0 - 5.0, 1.0)).collect();
        let s: Vec<f64> = gaze_speed(&pts).unwrap().into_iter().flatten().collect();
        assert_abs_diff_eq!(stats::mean(&s), 3.0, epsilon = 0.1);
    }

    #[test]
    fn gaps_give_missing_speed() {
        let s = gaze_speed(&[tp(0, 0.0, 0.0, 0.0), None, tp(2, 0.1, 20.0, 0.0)]).unwrap();
        assert_eq!(s, vec![None, None]);
        assert_eq!(gaze_speed(&[tp(0, 0.0, 0.0, 0.0)]), Err(KinematicsError::TooFewSamples(1)));
    }

    /// Exhaustive run finder used as the reference for `detect_saccades`.
    fn brute_runs(speeds: &[Option<f64>], thr: f64) -> Vec<(usize, usize)> {
        let above: Vec<bool> = speeds.iter().map(|s| s.is_some_and(|v| v > thr)).collect();
        let mut runs = Vec::new();
        for a in 0..above.len() {
            for b in a..above.len() {
                let inside = (a..=b).all(|i| above[i]);
                let left_closed = a == 0 || !above[a - 1];
                let right_closed = b + 1 == above.len() || !above[b + 1];
                if inside && left_closed && right_closed {
                    runs.push((a, b));
                }
            }
        }
        runs
    }

    #[test]
    fn one_saccade_span() {
        let speeds: Vec<_> = [5.0, 5.0, 140.0, 150.0, 6.0].map(Some).to_vec();
        let ev = detect_saccades(&speeds, 100.0);
        assert_eq!(ev, vec![SaccadeEvent { start: 2, end: 3 }]);
        assert_eq!(ev.iter().map(|e| (e.start, e.end)).collect::<Vec<_>>(), brute_runs(&speeds, 100.0));
    }

    #[test]
    fn no_saccades_below_threshold() {
        let speeds: Vec<_> = [5.0, 99.0, 100.0, 6.0].map(Some).to_vec();
        assert!(detect_saccades(&speeds, 100.0).is_empty());
    }

    #[test]
    fn trailing_and_gap_broken_runs() {
        let speeds = vec![Some(200.0), None, Some(200.0), Some(300.0)];
        let ev = detect_saccades(&speeds, 100.0);
        assert_eq!(ev, vec![SaccadeEvent { start: 0, end: 0 }, SaccadeEvent { start: 2, end: 3 }]);
    }

    /// Constructs per-frame gaze that dwells on alternating avatars with
    /// abrupt jumps between them.
    fn jump_trial(sides: &[Side], frames_each: usize) -> (Vec<Option<TrajPoint>>, AvatarTracks) {
        let mut gaze = Vec::new();
        let mut k = 0;
        for side in sides {
            for j in 0..frames_each {
                let x = side.sign() * 8.0 + 0.2 * ((j % 3) as f64 - 1.0);
                gaze.push(tp(k, k as f64 / 24.0, x, 0.1 * (j % 2) as f64));
                k += 1;
            }
        }
        let n = gaze.len();
        let tracks = AvatarTracks {
            centroid_x: [vec![Some(-8.0); n], vec![Some(8.0); n]],
            pelvis: [vec![Some(AnglePoint::new(-8.0, 0.0)); n], vec![Some(AnglePoint::new(8.0, 0.0)); n]],
            midline_x: vec![Some(0.0); n],
        };
        (gaze, tracks)
    }

    fn run_segmentation(gaze: &[Option<TrajPoint>], tracks: &AvatarTracks) -> Vec<GazeSegment> {
        let speeds = gaze_speed(gaze).unwrap();
        let sacc = detect_saccades(&speeds, 100.0);
        segment_trajectory(gaze, &sacc, tracks, &SegmentConfig::default())
    }

    #[test]
    fn alternating_sides_segment() {
        use Side::*;
        let (gaze, tracks) = jump_trial(&[Left, Right, Left, Right], 20);
        let segs = run_segmentation(&gaze, &tracks);
        assert_eq!(segs.iter().map(|s| s.side).collect::<Vec<_>>(), vec![Left, Right, Left, Right]);
        assert!(segs.windows(2).all(|w| w[0].end_frame < w[1].start_frame));
    }

    #[test]
    fn single_avatar_single_segment() {
        let (gaze, tracks) = jump_trial(&[Side::Right], 84);
        let segs = run_segmentation(&gaze, &tracks);
        assert_eq!(segs.len(), 1);
        assert_abs_diff_eq!(segs[0].duration, 3.5, epsilon = 1e-12);
    }

    #[test]
    fn equidistant_centroids_tie_to_left() {
        assert_eq!(classify_side(0.0, Some(-8.0), Some(8.0), 0.0), Side::Left);
        assert_eq!(classify_side(0.1, Some(-8.0), Some(8.0), 0.0), Side::Right);
        // Moving avatars: centroid rule overrides the midline.
        assert_eq!(classify_side(1.0, Some(-1.0), Some(15.0), 0.0), Side::Left);
        assert_eq!(classify_side(1.0, None, Some(15.0), 0.0), Side::Right);
        assert_eq!(classify_side(0.0, None, None, 0.0), Side::Left);
    }

    #[test]
    fn same_side_pieces_merge_across_gap() {
        let (mut gaze, tracks) = jump_trial(&[Side::Left], 30);
        gaze[10] = None;
        gaze[11] = None;
        let segs = run_segmentation(&gaze, &tracks);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].trajectory.len(), 28);
    }

    #[test]
    fn side_change_hidden_in_gap_still_splits() {
        let (mut gaze, tracks) = jump_trial(&[Side::Left, Side::Right], 20);
        gaze[19] = None;
        gaze[20] = None;
        let segs = run_segmentation(&gaze, &tracks);
        assert_eq!(segs.len(), 2);
    }

    #[test]
    fn calibration_preserves_speed() {
        let pts: Vec<_> = (0..20).map(|k| tp(k, k as f64 / 24.0, (k as f64).sin(), (k as f64 * 0.3).cos())).collect();
        let shifted: Vec<_> = pts.iter().map(|p| p.map(|p| TrajPoint { x: p.x + 0.7, y: p.y - 0.4, ..p })).collect();
        let a = gaze_speed(&pts).unwrap();
        let b = gaze_speed(&shifted).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert_abs_diff_eq!(a.unwrap(), b.unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_speed_histogram_mode() {
        let h = speed_histogram(&vec![7.0; 200], &HistogramConfig::default());
        let m = h.mode_bin().unwrap();
        assert!(m.lo >= 6.0 && m.hi <= 8.0);
        let total: f64 = h.bins.iter().map(|b| b.density * (b.hi - b.lo)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_histogram() {
        let h = speed_histogram(&[], &HistogramConfig::default());
        assert_eq!(h.n, 0);
        assert!(h.bins.is_empty() && h.mode_bin().is_none());
    }

    #[test]
    fn bimodal_histogram() {
        let mut v = vec![3.2; 100];
        v.extend(vec![9.3; 80]);
        v.extend(vec![6.1; 5]);
        let h = speed_histogram(&v, &HistogramConfig::default());
        let modes: Vec<f64> = h.local_modes().iter().map(|b| b.lo).collect();
        assert!(modes.contains(&3.0) && modes.contains(&9.0), "{modes:?}");
        let kde: &(f64, f64) = h.kde.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!((kde.0 - 3.2).abs() < 0.6);
    }

    #[test]
    fn raising_threshold_can_split_an_event() {
        // One run at 0 deg/s becomes two once the dip falls below threshold.
        let speeds = [Some(313.0), Some(10.0), Some(58.0)];
        assert_eq!(detect_saccades(&speeds, 0.0).len(), 1);
        assert_eq!(detect_saccades(&speeds, 41.0).len(), 2);
        // At physiological thresholds the count is monotone on this input.
        assert_eq!(detect_saccades(&speeds, 100.0).len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn affine_mapping(ax in -500.0f64..1800.0, ay in -500.0f64..1500.0, dx in -300.0f64..300.0, dy in -300.0f64..300.0) {
                let geom = g();
                let a = geom.px_to_deg(PixelPoint::new(ax + dx, ay + dy));
                let b = geom.px_to_deg(PixelPoint::new(ax, ay));
                prop_assert!((a.x - b.x - dx * 60.0 / 1280.0).abs() < 1e-9);
                prop_assert!((a.y - b.y - dy * 46.0 / 960.0).abs() < 1e-9);
            }

            #[test]
            fn raising_threshold_never_adds_saccades(
                speeds in proptest::collection::vec(proptest::option::weighted(0.9, 0.0f64..400.0), 0..80),
                t1 in 0.0f64..300.0, dt in 0.0f64..200.0,
            ) {
                // Saccade frames only shrink, and every event at the higher
                // threshold sits inside one at the lower threshold.
                let lo = detect_saccades(&speeds, t1);
                let hi = detect_saccades(&speeds, t1 + dt);
                let frames = |ev: &[SaccadeEvent]| ev.iter().map(|e| e.end - e.start + 1).sum::<usize>();
                prop_assert!(frames(&hi) <= frames(&lo));
                for e in &hi {
                    prop_assert!(lo.iter().any(|l| l.start <= e.start && e.end <= l.end));
                }
                let runs: Vec<_> = detect_saccades(&speeds, t1).iter().map(|e| (e.start, e.end)).collect();
                prop_assert_eq!(runs, brute_runs(&speeds, t1));
            }

            #[test]
            fn segmentation_partitions_window(
                xs in proptest::collection::vec(proptest::option::weighted(0.9, -12.0f64..12.0), 2..60),
            ) {
                let gaze: Vec<_> = xs.iter().enumerate().map(|(k, x)| x.map(|x| TrajPoint { frame: 100 + k, t: k as f64 / 24.0, x, y: 0.0 })).collect();
                let n = gaze.len();
                let tracks = AvatarTracks {
                    centroid_x: [vec![Some(-8.0); n], vec![Some(8.0); n]],
                    pelvis: [vec![None; n], vec![None; n]],
                    midline_x: vec![None; n],
                };
                let speeds = gaze_speed(&gaze).unwrap();
                let saccades = detect_saccades(&speeds, 100.0);
                let segments = segment_trajectory(&gaze, &saccades, &tracks, &SegmentConfig::default());
                for w in segments.windows(2) {
                    prop_assert!(w[0].end_frame < w[1].start_frame);
                    prop_assert!(w[0].side != w[1].side);
                }
                let seg = TrialSegmentation {
                    trial: TrialRecord { trial_id: 1, block: 1, natural_side: Side::Left, response_side: Side::Left, mse: 0.0, onset: 0.0, offset: 3.5, participant_id: "p".into() },
                    first_frame: 100, gaze: gaze.clone(), speeds, saccades, segments: segments.clone(), tracks,
                };
                let labels = seg.frame_labels();
                prop_assert_eq!(labels.len(), n);
                let in_segments: usize = segments.iter().map(|s| s.trajectory.len()).sum();
                let seg_labels = labels.iter().filter(|l| matches!(l, FrameLabel::Segment(_))).count();
                prop_assert_eq!(in_segments, seg_labels);
                let gaps = labels.iter().filter(|l| **l == FrameLabel::Gap).count();
                prop_assert_eq!(gaps, gaze.iter().filter(|g| g.is_none()).count());
            }
        }
    }
}
