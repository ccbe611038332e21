//! Parsing and validation of the three input streams.
//!
//! Gaze arrives at 60 Hz in scene-camera pixels, keypoints at the 24 Hz scene
//! frame rate, and trials as one row per 2AFC presentation. All readers take a
//! generic `Read` so tests can feed in-memory CSV; the `parse_*` wrappers open
//! files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{CameraGeometry, PixelPoint};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("timestamp at line {line} ({current}) does not increase past {previous}")]
    NonMonotonicTimestamp { line: u64, previous: f64, current: f64 },
    #[error("unknown keypoint label `{label}` at line {line}")]
    UnknownLabel { line: u64, label: String },
    #[error("label `{label}` appears twice in frame {frame} (line {line})")]
    DuplicateLabelInFrame { line: u64, frame: usize, label: String },
    #[error("trial {trial_id} at line {line} lasts {duration:.3} s, expected {expected:.3} s")]
    TrialDuration { line: u64, trial_id: u32, duration: f64, expected: f64 },
    #[error("{0} stream is empty")]
    EmptyStream(&'static str),
    #[error("gaze [{gaze_start}, {gaze_end}] and frames [{frame_start}, {frame_end}] do not overlap in time")]
    NoTemporalOverlap { gaze_start: f64, gaze_end: f64, frame_start: f64, frame_end: f64 },
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Display side of a stimulus or a gaze segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// `-1` for left, `+1` for right.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    /// Binary outcome coding, right = 1.
    pub fn as_binary(self) -> u8 {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn from_sign(sign: f64) -> Side {
        if sign > 0.0 {
            Side::Right
        } else {
            Side::Left
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" | "-1" => Ok(Side::Left),
            "right" | "r" | "1" | "+1" => Ok(Side::Right),
            other => Err(format!("unrecognised side `{other}`")),
        }
    }
}

// ---------------------------------------------------------------------------
// Gaze
// ---------------------------------------------------------------------------

/// One eye-tracker sample. `position` is `None` when the tracker exported no
/// coordinates; `valid` carries the tracker's own loss flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub timestamp: f64,
    pub position: Option<PixelPoint>,
    pub valid: bool,
    /// Coordinates outside the scene image. Kept unclamped.
    #[serde(default)]
    pub off_screen: bool,
}

impl GazeSample {
    /// Position if the sample is usable for kinematics.
    pub fn usable_position(&self) -> Option<PixelPoint> {
        if self.valid {
            self.position
        } else {
            None
        }
    }
}

/// Column names of the gaze export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GazeFormat {
    pub timestamp: String,
    pub x: String,
    pub y: String,
    pub valid: String,
}

impl Default for GazeFormat {
    fn default() -> Self {
        Self {
            timestamp: "timestamp_s".into(),
            x: "x_px".into(),
            y: "y_px".into(),
            valid: "valid".into(),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(false)
        .from_reader(reader)
}

fn csv_err(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IngestError::Csv { line, message: e.to_string() }
}

struct Header {
    names: Vec<String>,
}

impl Header {
    fn read<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Self> {
        let names = rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
        Ok(Self { names })
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_owned()))
    }

    fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| IngestError::MalformedRow {
        line,
        reason: format!("{what} `{field}` is not a finite number"),
    })
}

fn parse_opt_f64(field: &str, line: u64, what: &str) -> Result<Option<f64>> {
    if field.is_empty() || field.eq_ignore_ascii_case("nan") || field.eq_ignore_ascii_case("na") {
        Ok(None)
    } else {
        parse_f64(field, line, what).map(Some)
    }
}

fn parse_flag(field: &str, line: u64) -> Result<Option<bool>> {
    match field.to_ascii_lowercase().as_str() {
        "" => Ok(None),
        "1" | "true" | "t" | "yes" => Ok(Some(true)),
        "0" | "false" | "f" | "no" => Ok(Some(false)),
        other => Err(IngestError::MalformedRow { line, reason: format!("valid flag `{other}`") }),
    }
}

/// Read gaze samples. Rows with empty coordinates become invalid samples;
/// timestamps must strictly increase.
pub fn read_gaze<R: Read>(reader: R, format: &GazeFormat, geometry: &CameraGeometry) -> Result<Vec<GazeSample>> {
    let mut rdr = csv_reader(reader);
    let header = Header::read(&mut rdr)?;
    let it = header.index(&format.timestamp)?;
    let ix = header.index(&format.x)?;
    let iy = header.index(&format.y)?;
    let iv = header.index(&format.valid)?;

    let mut out: Vec<GazeSample> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let timestamp = parse_f64(field(it), line, "timestamp")?;
        if let Some(prev) = out.last() {
            if timestamp <= prev.timestamp {
                return Err(IngestError::NonMonotonicTimestamp { line, previous: prev.timestamp, current: timestamp });
            }
        }
        let x = parse_opt_f64(field(ix), line, "x")?;
        let y = parse_opt_f64(field(iy), line, "y")?;
        let flag = parse_flag(field(iv), line)?;
        let position = match (x, y) {
            (Some(x), Some(y)) => Some(PixelPoint::new(x, y)),
            _ => None,
        };
        let valid = position.is_some() && flag.unwrap_or(true);
        let off_screen = position.is_some_and(|p| !geometry.contains(p));
        out.push(GazeSample { timestamp, position, valid, off_screen });
    }
    Ok(out)
}

pub fn parse_gaze(path: &Path, format: &GazeFormat, geometry: &CameraGeometry) -> Result<Vec<GazeSample>> {
    read_gaze(open(path)?, format, geometry)
}

// ---------------------------------------------------------------------------
// Keypoints
// ---------------------------------------------------------------------------

/// Number of label slots per frame: four display corners plus fifteen body
/// labels for each of the two avatars.
pub const N_LABELS: usize = 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomRight,
    BottomLeft,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::TopLeft, Corner::TopRight, Corner::BottomRight, Corner::BottomLeft];

    fn name(self) -> &'static str {
        match self {
            Corner::TopLeft => "top_left",
            Corner::TopRight => "top_right",
            Corner::BottomRight => "bottom_right",
            Corner::BottomLeft => "bottom_left",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    Head,
    Neck,
    Manubrium,
    Torso,
    Pelvis,
    LeftShoulder,
    RightShoulder,
    LeftElbow,
    RightElbow,
    LeftHand,
    RightHand,
    LeftKnee,
    RightKnee,
    LeftFoot,
    RightFoot,
}

impl BodyPart {
    pub const ALL: [BodyPart; 15] = [
        BodyPart::Head,
        BodyPart::Neck,
        BodyPart::Manubrium,
        BodyPart::Torso,
        BodyPart::Pelvis,
        BodyPart::LeftShoulder,
        BodyPart::RightShoulder,
        BodyPart::LeftElbow,
        BodyPart::RightElbow,
        BodyPart::LeftHand,
        BodyPart::RightHand,
        BodyPart::LeftKnee,
        BodyPart::RightKnee,
        BodyPart::LeftFoot,
        BodyPart::RightFoot,
    ];

    fn name(self) -> &'static str {
        match self {
            BodyPart::Head => "head",
            BodyPart::Neck => "neck",
            BodyPart::Manubrium => "manubrium",
            BodyPart::Torso => "torso",
            BodyPart::Pelvis => "pelvis",
            BodyPart::LeftShoulder => "left_shoulder",
            BodyPart::RightShoulder => "right_shoulder",
            BodyPart::LeftElbow => "left_elbow",
            BodyPart::RightElbow => "right_elbow",
            BodyPart::LeftHand => "left_hand",
            BodyPart::RightHand => "right_hand",
            BodyPart::LeftKnee => "left_knee",
            BodyPart::RightKnee => "right_knee",
            BodyPart::LeftFoot => "left_foot",
            BodyPart::RightFoot => "right_foot",
        }
    }
}

/// A keypoint label slot. Body labels carry the avatar's display side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Corner(Corner),
    Body(Side, BodyPart),
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Corner(c) => Corner::ALL.iter().position(|&x| x == c).unwrap(),
            Label::Body(side, part) => {
                let base = match side {
                    Side::Left => 4,
                    Side::Right => 4 + BodyPart::ALL.len(),
                };
                base + BodyPart::ALL.iter().position(|&x| x == part).unwrap()
            }
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        match index {
            0..=3 => Some(Label::Corner(Corner::ALL[index])),
            4..=18 => Some(Label::Body(Side::Left, BodyPart::ALL[index - 4])),
            19..=33 => Some(Label::Body(Side::Right, BodyPart::ALL[index - 19])),
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = Label> {
        (0..N_LABELS).filter_map(Label::from_index)
    }

    /// CSV name: `corner.top_left`, `left.pelvis`, `right.left_knee`.
    pub fn name(self) -> String {
        match self {
            Label::Corner(c) => format!("corner.{}", c.name()),
            Label::Body(side, part) => format!("{}.{}", side.as_str(), part.name()),
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        let (prefix, rest) = s.trim().split_once('.')?;
        match prefix {
            "corner" => Corner::ALL.into_iter().find(|c| c.name() == rest).map(Label::Corner),
            "left" | "right" => {
                let side: Side = prefix.parse().ok()?;
                BodyPart::ALL.into_iter().find(|p| p.name() == rest).map(|p| Label::Body(side, p))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x_px: f64,
    pub y_px: f64,
    pub likelihood: f64,
}

impl Keypoint {
    pub fn point(&self) -> PixelPoint {
        PixelPoint::new(self.x_px, self.y_px)
    }
}

/// One scene frame worth of keypoints; `keypoints` always has
/// [`N_LABELS`] slots indexed by [`Label::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub frame_index: usize,
    pub timestamp: f64,
    pub keypoints: Vec<Option<Keypoint>>,
}

impl KeypointFrame {
    pub fn empty(frame_index: usize, timestamp: f64) -> Self {
        Self { frame_index, timestamp, keypoints: vec![None; N_LABELS] }
    }

    pub fn get(&self, label: Label) -> Option<&Keypoint> {
        self.keypoints[label.index()].as_ref()
    }

    pub fn set(&mut self, label: Label, kp: Keypoint) {
        self.keypoints[label.index()] = Some(kp);
    }

    pub fn present(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_some()).count()
    }
}

/// Frame clock of the scene camera: frame `i` is at `t0 + i / rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameClock {
    pub rate_hz: f64,
    pub t0: f64,
}

impl Default for FrameClock {
    fn default() -> Self {
        Self { rate_hz: 24.0, t0: 0.0 }
    }
}

impl FrameClock {
    pub fn time(&self, frame: usize) -> f64 {
        self.t0 + frame as f64 / self.rate_hz
    }
}

fn check_likelihood(l: f64, line: u64) -> Result<f64> {
    if (0.0..=1.0).contains(&l) {
        Ok(l)
    } else {
        Err(IngestError::MalformedRow { line, reason: format!("likelihood {l} outside [0, 1]") })
    }
}

fn parse_frame_index(field: &str, line: u64) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|_| IngestError::MalformedRow { line, reason: format!("frame `{field}` is not an index") })
}

/// Read keypoints in either long layout (`frame,label,x_px,y_px,likelihood`)
/// or wide layout (`frame,<label>_x,<label>_y,<label>_likelihood,...`).
/// The layout is chosen from the header. Frames are returned densely from 0
/// to the highest index seen; absent labels stay `None`.
pub fn read_keypoints<R: Read>(reader: R, clock: &FrameClock) -> Result<Vec<KeypointFrame>> {
    let mut rdr = csv_reader(reader);
    let header = Header::read(&mut rdr)?;
    let mut frames: BTreeMap<usize, KeypointFrame> = BTreeMap::new();
    let iframe = header.index("frame")?;

    if header.has("label") {
        let ilabel = header.index("label")?;
        let ix = header.index("x_px")?;
        let iy = header.index("y_px")?;
        let il = header.index("likelihood")?;
        for record in rdr.records() {
            let record = record.map_err(csv_err)?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| record.get(i).unwrap_or("");
            let frame = parse_frame_index(field(iframe), line)?;
            let raw_label = field(ilabel);
            let label =
                Label::parse(raw_label).ok_or_else(|| IngestError::UnknownLabel { line, label: raw_label.to_owned() })?;
            let entry = frames.entry(frame).or_insert_with(|| KeypointFrame::empty(frame, clock.time(frame)));
            if entry.get(label).is_some() {
                return Err(IngestError::DuplicateLabelInFrame { line, frame, label: label.name() });
            }
            let x = parse_opt_f64(field(ix), line, "x")?;
            let y = parse_opt_f64(field(iy), line, "y")?;
            let l = parse_opt_f64(field(il), line, "likelihood")?;
            if let (Some(x), Some(y), Some(l)) = (x, y, l) {
                entry.set(label, Keypoint { x_px: x, y_px: y, likelihood: check_likelihood(l, line)? });
            }
        }
    } else {
        let mut columns: Vec<(Label, usize, usize, usize)> = Vec::new();
        for name in &header.names {
            if let Some(stem) = name.strip_suffix("_likelihood") {
                let label = Label::parse(stem).ok_or_else(|| IngestError::UnknownLabel { line: 1, label: stem.into() })?;
                let ix = header.index(&format!("{stem}_x"))?;
                let iy = header.index(&format!("{stem}_y"))?;
                let il = header.index(name)?;
                if columns.iter().any(|&(l, ..)| l == label) {
                    return Err(IngestError::DuplicateLabelInFrame { line: 1, frame: 0, label: label.name() });
                }
                columns.push((label, ix, iy, il));
            }
        }
        for record in rdr.records() {
            let record = record.map_err(csv_err)?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| record.get(i).unwrap_or("");
            let frame = parse_frame_index(field(iframe), line)?;
            if frames.contains_key(&frame) {
                return Err(IngestError::MalformedRow { line, reason: format!("frame {frame} repeated") });
            }
            let mut kf = KeypointFrame::empty(frame, clock.time(frame));
            for &(label, ix, iy, il) in &columns {
                let x = parse_opt_f64(field(ix), line, "x")?;
                let y = parse_opt_f64(field(iy), line, "y")?;
                let l = parse_opt_f64(field(il), line, "likelihood")?;
                if let (Some(x), Some(y), Some(l)) = (x, y, l) {
                    kf.set(label, Keypoint { x_px: x, y_px: y, likelihood: check_likelihood(l, line)? });
                }
            }
            frames.insert(frame, kf);
        }
    }

    let Some(&last) = frames.keys().next_back() else {
        return Ok(Vec::new());
    };
    Ok((0..=last)
        .map(|i| frames.remove(&i).unwrap_or_else(|| KeypointFrame::empty(i, clock.time(i))))
        .collect())
}

pub fn parse_keypoints(path: &Path, clock: &FrameClock) -> Result<Vec<KeypointFrame>> {
    read_keypoints(open(path)?, clock)
}

/// Default detection cutoff.
pub const DEFAULT_P_CUTOFF: f64 = 0.9;

/// Drop keypoints with likelihood `<= p_cutoff`.
pub fn filter_keypoints(frames: &[KeypointFrame], p_cutoff: f64) -> Vec<KeypointFrame> {
    frames
        .iter()
        .map(|f| KeypointFrame {
            frame_index: f.frame_index,
            timestamp: f.timestamp,
            keypoints: f.keypoints.iter().map(|k| k.filter(|k| k.likelihood > p_cutoff)).collect(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// For each frame, the nearest gaze sample by timestamp, or `None` when the
/// nearest is more than `max_gap_s` away. Equidistant candidates resolve to
/// the earlier sample.
pub fn align_streams(gaze: &[GazeSample], frames: &[KeypointFrame], max_gap_s: f64) -> Result<Vec<Option<usize>>> {
    let (Some(g0), Some(g1)) = (gaze.first(), gaze.last()) else {
        return Err(IngestError::EmptyStream("gaze"));
    };
    let (Some(f0), Some(f1)) = (frames.first(), frames.last()) else {
        return Err(IngestError::EmptyStream("keypoint"));
    };
    let (frame_start, frame_end) = (f0.timestamp, f1.timestamp);
    if g1.timestamp + max_gap_s < frame_start || g0.timestamp - max_gap_s > frame_end {
        return Err(IngestError::NoTemporalOverlap {
            gaze_start: g0.timestamp,
            gaze_end: g1.timestamp,
            frame_start,
            frame_end,
        });
    }
    Ok(frames.iter().map(|f| nearest_sample(gaze, f.timestamp, max_gap_s)).collect())
}

fn nearest_sample(gaze: &[GazeSample], t: f64, max_gap_s: f64) -> Option<usize> {
    let idx = gaze.partition_point(|g| g.timestamp < t);
    let before = idx.checked_sub(1).map(|i| (i, t - gaze[i].timestamp));
    let after = gaze.get(idx).map(|g| (idx, g.timestamp - t));
    let best = match (before, after) {
        (Some(b), Some(a)) => {
            if b.1 <= a.1 {
                b
            } else {
                a
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => return None,
    };
    (best.1 <= max_gap_s).then_some(best.0)
}

// ---------------------------------------------------------------------------
// Trials
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u32,
    pub block: u32,
    pub natural_side: Side,
    pub response_side: Side,
    /// Cross-validatory model error of the artificial stimulus; task difficulty proxy.
    pub mse: f64,
    pub onset: f64,
    pub offset: f64,
    pub participant_id: String,
}

impl TrialRecord {
    pub fn correct(&self) -> bool {
        self.response_side == self.natural_side
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialFormat {
    /// Expected presentation duration.
    pub presentation_s: f64,
    /// Allowed deviation of `offset - onset` from `presentation_s`.
    pub duration_tolerance_s: f64,
    /// Added to onset/offset to map trial times onto the eye-tracker clock.
    pub clock_offset_s: f64,
}

impl Default for TrialFormat {
    fn default() -> Self {
        Self { presentation_s: 3.5, duration_tolerance_s: 0.1, clock_offset_s: 0.0 }
    }
}

pub fn read_trials<R: Read>(reader: R, participant_id: &str, format: &TrialFormat) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv_reader(reader);
    let header = Header::read(&mut rdr)?;
    let cols = ["trial_id", "block", "natural_side", "response_side", "mse", "onset_s", "offset_s"]
        .map(|c| header.index(c))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(cols[i]).unwrap_or("");
        let int = |i: usize, what: &str| {
            field(i)
                .parse::<u32>()
                .map_err(|_| IngestError::MalformedRow { line, reason: format!("{what} `{}`", field(i)) })
        };
        let side = |i: usize| field(i).parse::<Side>().map_err(|reason| IngestError::MalformedRow { line, reason });
        let trial_id = int(0, "trial_id")?;
        let mse = parse_f64(field(4), line, "mse")?;
        if mse < 0.0 {
            return Err(IngestError::MalformedRow { line, reason: format!("negative mse {mse}") });
        }
        let onset = parse_f64(field(5), line, "onset")? + format.clock_offset_s;
        let offset = parse_f64(field(6), line, "offset")? + format.clock_offset_s;
        let duration = offset - onset;
        if (duration - format.presentation_s).abs() > format.duration_tolerance_s {
            return Err(IngestError::TrialDuration { line, trial_id, duration, expected: format.presentation_s });
        }
        out.push(TrialRecord {
            trial_id,
            block: int(1, "block")?,
            natural_side: side(2)?,
            response_side: side(3)?,
            mse,
            onset,
            offset,
            participant_id: participant_id.to_owned(),
        });
    }
    Ok(out)
}

pub fn parse_trials(path: &Path, participant_id: &str, format: &TrialFormat) -> Result<Vec<TrialRecord>> {
    read_trials(open(path)?, participant_id, format)
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

/// Everything recorded for one participant, with the frame/gaze alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub participant_id: String,
    pub geometry: CameraGeometry,
    pub clock: FrameClock,
    pub gaze: Vec<GazeSample>,
    pub frames: Vec<KeypointFrame>,
    pub trials: Vec<TrialRecord>,
    /// `aligned[f]` is the gaze index chosen for frame `f`, `None` for a gap.
    pub aligned: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub gaze_format: GazeFormat,
    pub trial_format: TrialFormat,
    pub clock: FrameClock,
    pub geometry: CameraGeometry,
    pub p_cutoff: f64,
    /// Frames whose nearest gaze sample is further than this are gaps.
    pub max_gap_s: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            gaze_format: GazeFormat::default(),
            trial_format: TrialFormat::default(),
            clock: FrameClock::default(),
            geometry: CameraGeometry::default(),
            p_cutoff: DEFAULT_P_CUTOFF,
            max_gap_s: 1.0 / 24.0,
        }
    }
}

impl Session {
    /// Filter keypoints and align gaze onto frames.
    pub fn assemble(
        participant_id: &str,
        gaze: Vec<GazeSample>,
        frames: Vec<KeypointFrame>,
        trials: Vec<TrialRecord>,
        config: &IngestConfig,
    ) -> Result<Session> {
        let frames = filter_keypoints(&frames, config.p_cutoff);
        let aligned = align_streams(&gaze, &frames, config.max_gap_s)?;
        Ok(Session {
            participant_id: participant_id.to_owned(),
            geometry: config.geometry,
            clock: config.clock,
            gaze,
            frames,
            trials,
            aligned,
        })
    }

    /// Parse the three CSV files and assemble.
    pub fn load(
        participant_id: &str,
        gaze_path: &Path,
        keypoints_path: &Path,
        trials_path: &Path,
        config: &IngestConfig,
    ) -> Result<Session> {
        let gaze = parse_gaze(gaze_path, &config.gaze_format, &config.geometry)?;
        let frames = parse_keypoints(keypoints_path, &config.clock)?;
        let trials = parse_trials(trials_path, participant_id, &config.trial_format)?;
        Session::assemble(participant_id, gaze, frames, trials, config)
    }

    /// Usable gaze position for frame `f`.
    pub fn frame_gaze(&self, f: usize) -> Option<(f64, PixelPoint)> {
        let g = &self.gaze[self.aligned.get(f).copied().flatten()?];
        g.usable_position().map(|p| (g.timestamp, p))
    }

    /// Frames whose timestamp lies in `[start, end)`.
    pub fn frames_in(&self, start: f64, end: f64) -> std::ops::Range<usize> {
        let a = self.frames.partition_point(|f| f.timestamp < start);
        let b = self.frames.partition_point(|f| f.timestamp < end);
        a..b
    }
}
