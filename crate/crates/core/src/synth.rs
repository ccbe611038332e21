//! Synthetic sessions with known ground truth, written in the exact ingest
//! formats, and synthetic logistic-regression data sets.
//!
//! The generator works on the 60 Hz gaze clock but plans every event on the
//! 24 Hz frame grid: an inter-stimulus saccade leaves from the gaze sample
//! paired with one frame and lands on the sample paired with a later frame,
//! so the per-frame ground truth is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::LogisticModel;
use crate::ingest::{
    self, BodyPart, Corner, GazeSample, IngestConfig, IngestError, KeypointFrame, Label, Session, Side, N_LABELS,
};
use crate::kinematics::{AnglePoint, CameraGeometry};
use crate::stats::sigmoid;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub participant_id: String,
    pub seed: u64,
    pub n_trials: usize,
    pub n_blocks: usize,
    pub trial_s: f64,
    pub fixation_s: f64,
    pub response_s: f64,
    pub gaze_rate: f64,
    pub frame_rate: f64,
    pub avatar_separation_deg: f64,
    pub avatar_speed_deg_s: f64,
    /// Within-segment gaze speed band.
    pub jitter_speed_min: f64,
    pub jitter_speed_max: f64,
    pub saccade_speed_deg_s: f64,
    /// Inter-stimulus saccades per trial, drawn uniformly in this range.
    pub min_saccades: usize,
    pub max_saccades: usize,
    pub min_segment_s: f64,
    pub decision_alpha: f64,
    /// Weight of the last fixated side (+/-1) on the right-choice logit.
    pub decision_beta_last: f64,
    pub decision_beta_task: f64,
    /// Interaction of standardised MSE with the last side.
    pub cascade_beta_mse: f64,
    /// Decision copies the last fixated side exactly.
    pub copy_last: bool,
    pub mse_min: f64,
    pub mse_max: f64,
    /// Radius of the random per-block calibration offset.
    pub max_calibration_offset_px: f64,
    /// Explicit per-block offsets, overriding the random ones.
    pub block_offsets_px: Option<Vec<[f64; 2]>>,
    pub fixation_jitter_deg: f64,
    /// Probability that a gaze sample is lost.
    pub dropout_rate: f64,
    /// Probability that a lower-body keypoint is reported with low likelihood.
    pub occlusion_rate: f64,
    pub display_half_width_deg: f64,
    pub display_half_height_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            participant_id: "synth01".into(),
            seed: 0,
            n_trials: 643,
            n_blocks: 4,
            trial_s: 3.5,
            fixation_s: 0.75,
            response_s: 0.5,
            gaze_rate: 60.0,
            frame_rate: 24.0,
            avatar_separation_deg: 16.0,
            avatar_speed_deg_s: 3.0,
            jitter_speed_min: 6.0,
            jitter_speed_max: 8.0,
            saccade_speed_deg_s: 400.0,
            min_saccades: 0,
            max_saccades: 4,
            min_segment_s: 0.25,
            decision_alpha: 0.0,
            decision_beta_last: 2.197,
            decision_beta_task: 0.0,
            cascade_beta_mse: 0.0,
            copy_last: false,
            mse_min: 0.2,
            mse_max: 1.0,
            max_calibration_offset_px: 30.0,
            block_offsets_px: None,
            fixation_jitter_deg: 0.1,
            dropout_rate: 0.0,
            occlusion_rate: 0.02,
            display_half_width_deg: 20.0,
            display_half_height_deg: 12.0,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    fn frames(&self, seconds: f64) -> Result<usize> {
        let f = seconds * self.frame_rate;
        if (f - f.round()).abs() > 1e-9 {
            return Err(SynthError::InvalidConfig(format!("{seconds} s is not a whole number of frames")));
        }
        Ok(f.round() as usize)
    }

    /// Frames spent in flight by one inter-stimulus saccade.
    fn flight_frames(&self) -> usize {
        (self.avatar_separation_deg * self.frame_rate / self.saccade_speed_deg_s).ceil().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        let positive = [
            ("trial_s", self.trial_s),
            ("fixation_s", self.fixation_s),
            ("gaze_rate", self.gaze_rate),
            ("frame_rate", self.frame_rate),
            ("avatar_separation_deg", self.avatar_separation_deg),
            ("jitter_speed_min", self.jitter_speed_min),
            ("saccade_speed_deg_s", self.saccade_speed_deg_s),
            ("min_segment_s", self.min_segment_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.response_s < 0.0 || self.avatar_speed_deg_s < 0.0 {
            return bad("durations and speeds must be non-negative".into());
        }
        if self.n_trials == 0 || self.n_blocks == 0 || self.n_blocks > self.n_trials {
            return bad(format!("need 1 <= n_blocks <= n_trials, got {} and {}", self.n_blocks, self.n_trials));
        }
        if self.gaze_rate < self.frame_rate {
            return bad("gaze_rate must be at least frame_rate".into());
        }
        if self.jitter_speed_max < self.jitter_speed_min {
            return bad("jitter_speed_max < jitter_speed_min".into());
        }
        if self.min_saccades > self.max_saccades {
            return bad("min_saccades > max_saccades".into());
        }
        if self.saccade_speed_deg_s <= 100.0 {
            return bad("saccade_speed_deg_s must exceed 100".into());
        }
        // Slowest frame-to-frame step of a flight must still read as a saccade.
        let m = self.flight_frames() as f64;
        let step_speed = self.avatar_separation_deg / m / (1.0 / self.frame_rate + 1.0 / self.gaze_rate);
        if step_speed <= 100.0 {
            return bad(format!("saccades at {} deg/s would not be detectable", self.saccade_speed_deg_s));
        }
        if self.mse_max <= self.mse_min || self.mse_min < 0.0 {
            return bad("need 0 <= mse_min < mse_max".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) || !(0.0..=1.0).contains(&self.occlusion_rate) {
            return bad("rates must lie in [0, 1)".into());
        }
        if let Some(offsets) = &self.block_offsets_px {
            if offsets.len() != self.n_blocks {
                return bad(format!("{} block offsets for {} blocks", offsets.len(), self.n_blocks));
            }
        }
        let window = self.frames(self.trial_s)?;
        self.frames(self.fixation_s)?;
        self.frames(self.response_s)?;
        let k = self.max_saccades;
        let min_seg = self.frames(self.min_segment_s).unwrap_or((self.min_segment_s * self.frame_rate).ceil() as usize).max(1);
        if (k + 1) * min_seg + k * (self.flight_frames() - 1) > window {
            return bad(format!("{k} saccades do not fit in a {window}-frame trial"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub side: Side,
    /// Absolute frame indices, inclusive.
    pub start_frame: usize,
    pub end_frame: usize,
    pub speed_deg_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub trial_id: u32,
    pub block: u32,
    pub segments: Vec<SegmentTruth>,
    pub n_saccades: usize,
    pub first_side: Side,
    pub last_side: Side,
    /// Valid gazed frames per side over the frame rate.
    pub duration_left: f64,
    pub duration_right: f64,
    pub upper_frames: usize,
    pub lower_frames: usize,
    pub mse: f64,
    pub z_mse: f64,
    pub p_right: f64,
    pub natural_side: Side,
    pub response_side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTruth {
    pub block: u32,
    pub dx_px: f64,
    pub dy_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub fixation_cross_px: [f64; 2],
    pub blocks: Vec<BlockTruth>,
    pub trials: Vec<TrialTruth>,
}

/// Generated files, in memory.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub gaze_csv: String,
    pub keypoints_csv: String,
    pub trials_csv: String,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub gaze: PathBuf,
    pub keypoints: PathBuf,
    pub trials: PathBuf,
    pub truth: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            gaze: dir.join("gaze.csv"),
            keypoints: dir.join("keypoints.csv"),
            trials: dir.join("trials.csv"),
            truth: dir.join("truth.json"),
        }
    }
}

impl SynthOutput {
    /// Ingest configuration matching the generator's clocks.
    pub fn ingest_config(&self) -> IngestConfig {
        let c = &self.truth.config;
        let mut cfg = IngestConfig::default();
        cfg.clock.rate_hz = c.frame_rate;
        cfg.trial_format.presentation_s = c.trial_s;
        cfg.max_gap_s = 1.0 / c.frame_rate;
        cfg
    }

    /// Parse the generated files exactly as the ingest stage would.
    pub fn session(&self, config: &IngestConfig) -> Result<Session> {
        let pid = &self.truth.config.participant_id;
        let gaze = ingest::read_gaze(self.gaze_csv.as_bytes(), &config.gaze_format, &config.geometry)?;
        let frames = ingest::read_keypoints(self.keypoints_csv.as_bytes(), &config.clock)?;
        let trials = ingest::read_trials(self.trials_csv.as_bytes(), pid, &config.trial_format)?;
        Ok(Session::assemble(pid, gaze, frames, trials, config)?)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<SynthPaths> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let paths = SynthPaths::in_dir(dir);
        fs::write(&paths.gaze, &self.gaze_csv).map_err(io(&paths.gaze))?;
        fs::write(&paths.keypoints, &self.keypoints_csv).map_err(io(&paths.keypoints))?;
        fs::write(&paths.trials, &self.trials_csv).map_err(io(&paths.trials))?;
        let truth = serde_json::to_string_pretty(&self.truth).expect("truth serialises");
        fs::write(&paths.truth, truth + "\n").map_err(io(&paths.truth))?;
        Ok(paths)
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

/// Body keypoint offsets from the avatar centre in degrees (x right, y down).
fn body_template(part: BodyPart) -> (f64, f64) {
    match part {
        BodyPart::Head => (0.0, -6.0),
        BodyPart::Neck => (0.0, -5.1),
        BodyPart::Manubrium => (0.0, -4.5),
        BodyPart::Torso => (0.0, -2.5),
        BodyPart::Pelvis => (0.0, PELVIS_Y),
        BodyPart::LeftShoulder => (-1.2, -4.3),
        BodyPart::RightShoulder => (1.2, -4.3),
        BodyPart::LeftElbow => (-1.6, -2.2),
        BodyPart::RightElbow => (1.6, -2.2),
        BodyPart::LeftHand => (-1.8, 0.0),
        BodyPart::RightHand => (1.8, 0.0),
        BodyPart::LeftKnee => (-0.6, 3.2),
        BodyPart::RightKnee => (0.6, 3.2),
        BodyPart::LeftFoot => (-0.7, 6.0),
        BodyPart::RightFoot => (0.7, 6.0),
    }
}

const PELVIS_Y: f64 = 0.5;

fn is_lower_body(part: BodyPart) -> bool {
    matches!(part, BodyPart::LeftKnee | BodyPart::RightKnee | BodyPart::LeftFoot | BodyPart::RightFoot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SampleState {
    Fixation,
    Side(Side),
    Flight,
}

/// Constant-speed gaze that steers toward a moving target point.
struct Walker {
    pos: AnglePoint,
    heading: f64,
    speed: f64,
    target_dx: f64,
    target_y: f64,
    retarget_at: f64,
}

impl Walker {
    const MAX_TURN: f64 = 3.0 * std::f64::consts::PI;

    fn retarget(&mut self, rng: &mut ChaCha8Rng, t: f64) {
        self.target_dx = rng.random_range(-1.0..1.0);
        self.target_y = rng.random_range(-5.5..5.5);
        self.retarget_at = t + rng.random_range(0.3..0.8);
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, t: f64, dt: f64, avatar_x: f64) {
        if t >= self.retarget_at {
            self.retarget(rng, t);
        }
        let (tx, ty) = (avatar_x + self.target_dx, self.target_y);
        let desired = (ty - self.pos.y).atan2(tx - self.pos.x);
        let mut diff = desired - self.heading;
        while diff > std::f64::consts::PI {
            diff -= 2.0 * std::f64::consts::PI;
        }
        while diff < -std::f64::consts::PI {
            diff += 2.0 * std::f64::consts::PI;
        }
        let noise: f64 = rng.sample(StandardNormal);
        self.heading += diff.clamp(-Self::MAX_TURN * dt, Self::MAX_TURN * dt) + 0.5 * noise * dt.sqrt();
        self.pos.x += self.speed * dt * self.heading.cos();
        self.pos.y += self.speed * dt * self.heading.sin();
    }
}

struct Plan {
    onset_frame: usize,
    window: usize,
    gaze_first: usize,
    gaze_end: usize,
    isi_first: usize,
}

/// Generate a full session.
pub fn gen_session(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let geom = CameraGeometry::default();
    let cross = geom.center();

    let isi_frames = cfg.frames(cfg.fixation_s)?;
    let window = cfg.frames(cfg.trial_s)?;
    let response_frames = cfg.frames(cfg.response_s)?;
    let cycle = isi_frames + window + response_frames;
    let n_frames = cycle * cfg.n_trials;
    let total_s = n_frames as f64 / cfg.frame_rate;
    let n_gaze = (total_s * cfg.gaze_rate).floor() as usize;

    // Gaze timestamps as written, then the frame pairing the reader will find.
    let gaze_t: Vec<f64> = (0..n_gaze).map(|k| round_to(k as f64 / cfg.gaze_rate, 6)).collect();
    let frame_t: Vec<f64> = (0..n_frames).map(|f| f as f64 / cfg.frame_rate).collect();
    let placeholder: Vec<GazeSample> =
        gaze_t.iter().map(|&t| GazeSample { timestamp: t, position: None, valid: true, off_screen: false }).collect();
    let frame_stubs: Vec<KeypointFrame> = frame_t.iter().enumerate().map(|(f, &t)| KeypointFrame::empty(f, t)).collect();
    let paired = ingest::align_streams(&placeholder, &frame_stubs, 1.0 / cfg.frame_rate)?;
    let pair = |f: usize| paired[f].expect("dense streams pair every frame");

    let block_offsets: Vec<[f64; 2]> = match &cfg.block_offsets_px {
        Some(o) => o.clone(),
        None => (0..cfg.n_blocks)
            .map(|_| {
                let r = cfg.max_calibration_offset_px * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                [round_to(r * a.cos(), 3), round_to(r * a.sin(), 3)]
            })
            .collect(),
    };
    let block_of = |i: usize| i * cfg.n_blocks / cfg.n_trials;

    let mut true_deg: Vec<AnglePoint> = vec![AnglePoint::new(0.0, 0.0); n_gaze];
    let mut state = vec![SampleState::Fixation; n_gaze];
    let mut offset_of = vec![[0.0, 0.0]; n_gaze];
    let mut frames_out: Vec<(usize, Vec<Option<(f64, f64, f64)>>)> = Vec::new();
    let mut trial_rows = String::from("trial_id,block,natural_side,response_side,mse,onset_s,offset_s\n");
    let mut truths = Vec::new();

    let fix_noise = Normal::new(0.0, cfg.fixation_jitter_deg.max(1e-12)).expect("finite sd");
    let kp_noise = Normal::new(0.0, 0.5).expect("finite sd");
    let mse_mean = 0.5 * (cfg.mse_min + cfg.mse_max);
    let mse_sd = (cfg.mse_max - cfg.mse_min) / 12f64.sqrt();
    let flight = cfg.flight_frames();
    let min_seg = ((cfg.min_segment_s * cfg.frame_rate).ceil() as usize).max(1);
    let dt = 1.0 / cfg.gaze_rate;

    for i in 0..cfg.n_trials {
        let block = block_of(i);
        let first_frame = i * cycle;
        let plan = Plan {
            onset_frame: first_frame + isi_frames,
            window,
            isi_first: gaze_t.partition_point(|&t| t < frame_t[first_frame]),
            gaze_first: gaze_t.partition_point(|&t| t < frame_t[first_frame + isi_frames] - 0.03),
            gaze_end: gaze_t.partition_point(|&t| t < frame_t[first_frame + isi_frames + window]),
        };
        let next_isi = if i + 1 < cfg.n_trials { gaze_t.partition_point(|&t| t < frame_t[first_frame + cycle]) } else { n_gaze };
        let onset_t = frame_t[plan.onset_frame];
        let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let half = cfg.avatar_separation_deg / 2.0;
        let avatar_x = |side: Side, t: f64| side.sign() * half + dir * cfg.avatar_speed_deg_s * (t - onset_t - cfg.trial_s / 2.0);

        for s in plan.isi_first..next_isi {
            offset_of[s] = block_offsets[block];
        }
        for s in plan.isi_first..plan.gaze_first {
            true_deg[s] = AnglePoint::new(fix_noise.sample(&mut rng), fix_noise.sample(&mut rng));
        }

        // Segment layout on the frame grid.
        let k = rng.random_range(cfg.min_saccades..=cfg.max_saccades);
        let spare = plan.window - (k + 1) * min_seg - k * (flight - 1);
        let mut cuts: Vec<usize> = (0..k).map(|_| rng.random_range(0..=spare)).collect();
        cuts.sort_unstable();
        let mut lens = Vec::with_capacity(k + 1);
        let mut prev = 0;
        for &c in cuts.iter().chain(std::iter::once(&spare)) {
            lens.push(min_seg + c - prev);
            prev = c;
        }
        let first_side = if rng.random::<bool>() { Side::Right } else { Side::Left };
        let mut segs = Vec::with_capacity(k + 1);
        let mut f = plan.onset_frame;
        for (j, &len) in lens.iter().enumerate() {
            let side = if j % 2 == 0 { first_side } else { first_side.opposite() };
            let speed = rng.random_range(cfg.jitter_speed_min..=cfg.jitter_speed_max);
            segs.push(SegmentTruth { side, start_frame: f, end_frame: f + len - 1, speed_deg_s: speed });
            f += len + flight - 1;
        }

        // Gaze samples over the presentation.
        let mut seg_idx = 0;
        let start_walker = |rng: &mut ChaCha8Rng, side: Side, speed: f64, t: f64| {
            let mut w = Walker { pos: AnglePoint::new(0.0, 0.0), heading: rng.random_range(0.0..std::f64::consts::TAU), speed, target_dx: 0.0, target_y: 0.0, retarget_at: 0.0 };
            w.retarget(rng, t);
            w.pos = AnglePoint::new(avatar_x(side, t) + w.target_dx, w.target_y);
            w.retarget(rng, t);
            w
        };
        let mut walker = start_walker(&mut rng, segs[0].side, segs[0].speed_deg_s, gaze_t[plan.gaze_first]);
        let mut s = plan.gaze_first;
        while s < plan.gaze_end {
            let seg = &segs[seg_idx];
            let depart = pair(seg.end_frame);
            if seg_idx + 1 < segs.len() && s > depart {
                // In flight toward the next avatar, landing on a frame sample.
                let next = &segs[seg_idx + 1];
                let land = pair(next.start_frame);
                let from = true_deg[depart];
                let mut lander = start_walker(&mut rng, next.side, next.speed_deg_s, gaze_t[land]);
                for q in s..land {
                    let u = (gaze_t[q] - gaze_t[depart]) / (gaze_t[land] - gaze_t[depart]);
                    true_deg[q] = AnglePoint::new(from.x + u * (lander.pos.x - from.x), from.y + u * (lander.pos.y - from.y));
                    state[q] = SampleState::Flight;
                }
                true_deg[land] = lander.pos;
                state[land] = SampleState::Side(next.side);
                lander.step(&mut rng, gaze_t[land], 0.0, avatar_x(next.side, gaze_t[land]));
                walker = lander;
                seg_idx += 1;
                s = land + 1;
                continue;
            }
            if s > plan.gaze_first {
                walker.step(&mut rng, gaze_t[s], dt, avatar_x(seg.side, gaze_t[s]));
            }
            true_deg[s] = walker.pos;
            state[s] = SampleState::Side(seg.side);
            s += 1;
        }
        for q in plan.gaze_end..next_isi {
            true_deg[q] = AnglePoint::new(fix_noise.sample(&mut rng), fix_noise.sample(&mut rng));
        }

        // Keypoints for presentation frames; knees and feet are sometimes
        // occluded and reported with low confidence.
        for fr in plan.onset_frame..plan.onset_frame + plan.window {
            let t = frame_t[fr];
            let mut slots = vec![None; N_LABELS];
            for c in Corner::ALL {
                let (sx, sy) = match c {
                    Corner::TopLeft => (-1.0, -1.0),
                    Corner::TopRight => (1.0, -1.0),
                    Corner::BottomRight => (1.0, 1.0),
                    Corner::BottomLeft => (-1.0, 1.0),
                };
                let p = geom.deg_to_px(AnglePoint::new(sx * cfg.display_half_width_deg, sy * cfg.display_half_height_deg));
                let l = rng.random_range(0.97..1.0);
                slots[Label::Corner(c).index()] = Some((round_to(p.x, 1), round_to(p.y, 1), round_to(l, 3)));
            }
            for side in [Side::Left, Side::Right] {
                let cx = avatar_x(side, t);
                for part in BodyPart::ALL {
                    let (ox, oy) = body_template(part);
                    let p = geom.deg_to_px(AnglePoint::new(cx + ox, oy));
                    let occluded = is_lower_body(part) && rng.random::<f64>() < cfg.occlusion_rate;
                    let l = if occluded { rng.random_range(0.1..0.8) } else { rng.random_range(0.95..1.0) };
                    let (nx, ny) = (kp_noise.sample(&mut rng), kp_noise.sample(&mut rng));
                    slots[Label::Body(side, part).index()] =
                        Some((round_to(p.x + nx, 1), round_to(p.y + ny, 1), round_to(l, 3)));
                }
            }
            frames_out.push((fr, slots));
        }

        // Decision.
        let last_side = segs.last().expect("at least one segment").side;
        let natural_side = if rng.random::<bool>() { Side::Right } else { Side::Left };
        let mse = round_to(rng.random_range(cfg.mse_min..cfg.mse_max), 6);
        let z_mse = (mse - mse_mean) / mse_sd;
        let eta = cfg.decision_alpha
            + last_side.sign() * (cfg.decision_beta_last + cfg.cascade_beta_mse * z_mse)
            + cfg.decision_beta_task * natural_side.sign();
        let p_right = if cfg.copy_last { f64::from(last_side.as_binary()) } else { sigmoid(eta) };
        let response_side = if rng.random::<f64>() < p_right { Side::Right } else { Side::Left };

        let onset = round_to(onset_t, 6);
        let offset = round_to(frame_t[plan.onset_frame + plan.window], 6);
        writeln!(
            trial_rows,
            "{},{},{},{},{:.6},{:.6},{:.6}",
            i + 1,
            block + 1,
            natural_side.as_str(),
            response_side.as_str(),
            mse,
            onset,
            offset
        )
        .expect("write to string");
        truths.push((i, segs, first_side, last_side, mse, z_mse, p_right, natural_side, response_side, plan.onset_frame));
    }

    // Dropouts and the recorded (offset) gaze.
    let mut valid = vec![true; n_gaze];
    if cfg.dropout_rate > 0.0 {
        for v in valid.iter_mut() {
            *v = rng.random::<f64>() >= cfg.dropout_rate;
        }
    }
    let mut gaze_csv = String::with_capacity(n_gaze * 32);
    gaze_csv.push_str("timestamp_s,x_px,y_px,valid\n");
    for s in 0..n_gaze {
        if valid[s] {
            let p = geom.deg_to_px(true_deg[s]);
            let [dx, dy] = offset_of[s];
            writeln!(gaze_csv, "{:.6},{:.2},{:.2},1", gaze_t[s], p.x + dx, p.y + dy).expect("write to string");
        } else {
            writeln!(gaze_csv, "{:.6},,,0", gaze_t[s]).expect("write to string");
        }
    }

    let mut kp_csv = String::with_capacity(frames_out.len() * 700);
    kp_csv.push_str("frame");
    let labels: Vec<Label> = Label::all().collect();
    for l in &labels {
        let n = l.name();
        write!(kp_csv, ",{n}_x,{n}_y,{n}_likelihood").expect("write to string");
    }
    kp_csv.push('\n');
    for (fr, slots) in &frames_out {
        write!(kp_csv, "{fr}").expect("write to string");
        for l in &labels {
            match slots[l.index()] {
                Some((x, y, p)) => write!(kp_csv, ",{x:.1},{y:.1},{p:.3}"),
                None => write!(kp_csv, ",,,"),
            }
            .expect("write to string");
        }
        kp_csv.push('\n');
    }

    // Per-frame truth from the sample paired with each frame.
    let trials = truths
        .into_iter()
        .map(|(i, segs, first_side, last_side, mse, z_mse, p_right, natural_side, response_side, onset_frame)| {
            let (mut left, mut right, mut upper, mut lower) = (0usize, 0usize, 0usize, 0usize);
            for fr in onset_frame..onset_frame + window {
                let s = pair(fr);
                if let (SampleState::Side(side), true) = (state[s], valid[s]) {
                    match side {
                        Side::Left => left += 1,
                        Side::Right => right += 1,
                    }
                    if true_deg[s].y < PELVIS_Y {
                        upper += 1;
                    } else {
                        lower += 1;
                    }
                }
            }
            TrialTruth {
                trial_id: i as u32 + 1,
                block: block_of(i) as u32 + 1,
                n_saccades: segs.len() - 1,
                segments: segs,
                first_side,
                last_side,
                duration_left: left as f64 / cfg.frame_rate,
                duration_right: right as f64 / cfg.frame_rate,
                upper_frames: upper,
                lower_frames: lower,
                mse,
                z_mse,
                p_right,
                natural_side,
                response_side,
            }
        })
        .collect();

    let truth = GroundTruth {
        config: cfg.clone(),
        fixation_cross_px: [cross.x, cross.y],
        blocks: block_offsets
            .iter()
            .enumerate()
            .map(|(b, o)| BlockTruth { block: b as u32 + 1, dx_px: o[0], dy_px: o[1] })
            .collect(),
        trials,
    };
    Ok(SynthOutput { gaze_csv, keypoints_csv: kp_csv, trials_csv: trial_rows, truth })
}

/// Distribution of synthetic regression features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureDist {
    StandardNormal,
    Uniform { lo: f64, hi: f64 },
    /// +/-1 with equal probability.
    Sign,
    /// 0/1 with `P(1) = p`.
    Bernoulli { p: f64 },
}

impl FeatureDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            FeatureDist::StandardNormal => rng.sample(StandardNormal),
            FeatureDist::Uniform { lo, hi } => rng.random_range(lo..hi),
            FeatureDist::Sign => {
                if rng.random::<bool>() { 1.0 } else { -1.0 }
            }
            FeatureDist::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticTruth {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub probs: Vec<f64>,
}

/// `n` i.i.d. feature rows and outcomes drawn from the logistic model.
pub fn gen_logistic_data(n: usize, alpha: f64, beta: &[f64], dist: FeatureDist, seed: u64) -> (LogisticModel, LogisticTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = beta.iter().map(|_| dist.sample(&mut rng)).collect();
        let p = sigmoid(alpha + beta.iter().zip(&row).map(|(b, y)| b * y).sum::<f64>());
        xs.push(u8::from(rng.random::<f64>() < p));
        probs.push(p);
        rows.push(row);
    }
    let names = (0..beta.len()).map(|j| format!("y{j}")).collect();
    let model = LogisticModel::new(xs, rows, names).expect("finite synthetic features");
    (model, LogisticTruth { alpha, beta: beta.to_vec(), probs })
}
