//! Browser demo: segment a synthetic trial, build the speed histogram of a
//! synthetic session, and run the gaze-cascade test on simulated choices.
//! Every entry point returns JSON for the page script.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use gaze2afc::cascade::{self, Bands, CascadeConfig};
use gaze2afc::inference::SamplerConfig;
use gaze2afc::kinematics::{self, CalibrationConfig, HistogramConfig, SegmentConfig, SegmentedSession};
use gaze2afc::synth::{self, SynthConfig};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(js_err)
}

fn synth_segments(cfg: &SynthConfig, threshold: f64) -> Result<SegmentedSession, JsValue> {
    let out = synth::gen_session(cfg).map_err(js_err)?;
    let session = out.session(&out.ingest_config()).map_err(js_err)?;
    let (cal, report) = kinematics::post_calibrate(&session, &CalibrationConfig::default());
    Ok(kinematics::segment_session(&cal, report, &SegmentConfig { threshold_deg_s: threshold, ..Default::default() }))
}

#[derive(Serialize)]
struct TrialView {
    /// Per frame: gaze (x, y) in degrees, or null for gaps.
    gaze: Vec<Option<(f64, f64)>>,
    left_x: Vec<Option<f64>>,
    right_x: Vec<Option<f64>>,
    speeds: Vec<Option<f64>>,
    /// Window-relative (start, end, side) per segment.
    segments: Vec<(usize, usize, &'static str)>,
    true_sides: Vec<&'static str>,
    threshold: f64,
}

/// One synthetic trial with `n_saccades` inter-stimulus saccades, segmented
/// at `threshold` deg/s.
#[wasm_bindgen]
pub fn segment_demo(n_saccades: usize, threshold: f64, seed: u64) -> Result<String, JsValue> {
    let cfg = SynthConfig {
        n_trials: 1,
        n_blocks: 1,
        min_saccades: n_saccades,
        max_saccades: n_saccades,
        seed,
        ..Default::default()
    };
    let truth_sides = {
        let out = synth::gen_session(&cfg).map_err(js_err)?;
        out.truth.trials[0].segments.iter().map(|s| s.side.as_str()).collect()
    };
    let seg = synth_segments(&cfg, threshold)?;
    let t = seg.trials.first().ok_or_else(|| js_err("trial could not be segmented"))?;
    let view = TrialView {
        gaze: t.gaze.iter().map(|g| g.map(|p| (p.x, p.y))).collect(),
        left_x: t.tracks.centroid_x[0].clone(),
        right_x: t.tracks.centroid_x[1].clone(),
        speeds: t.speeds.clone(),
        segments: t
            .segments
            .iter()
            .map(|s| (s.start_frame - t.first_frame, s.end_frame - t.first_frame, s.side.as_str()))
            .collect(),
        true_sides: truth_sides,
        threshold,
    };
    to_json(&view)
}

/// Speed histogram of a synthetic session whose within-segment gaze moves
/// at a speed drawn from `[jitter_min, jitter_max]` deg/s.
#[wasm_bindgen]
pub fn speed_histogram_demo(jitter_min: f64, jitter_max: f64, n_trials: usize, seed: u64) -> Result<String, JsValue> {
    let cfg = SynthConfig {
        n_trials: n_trials.max(1),
        n_blocks: 1,
        jitter_speed_min: jitter_min,
        jitter_speed_max: jitter_max,
        seed,
        ..Default::default()
    };
    let seg = synth_segments(&cfg, SegmentConfig::default().threshold_deg_s)?;
    let hist = kinematics::speed_histogram(&kinematics::session_speeds(&seg), &HistogramConfig::default());
    #[derive(Serialize)]
    struct View {
        hist: kinematics::SpeedHistogram,
        mode: Option<(f64, f64)>,
    }
    let mode = hist.mode_bin().map(|b| (b.lo, b.hi));
    to_json(&View { hist, mode })
}

/// Simulated congruence data (90% congruent at average difficulty) with
/// slope `beta_mse` on standardised MSE, then the posterior probability
/// that the slope is negative.
#[wasm_bindgen]
pub fn cascade_demo(beta_mse: f64, n_trials: usize, seed: u64) -> Result<String, JsValue> {
    let (data, _) = synth::gen_logistic_data(
        n_trials.max(2),
        9f64.ln(),
        &[beta_mse],
        synth::FeatureDist::StandardNormal,
        seed,
    );
    let mse: Vec<f64> = data.features.iter().map(|r| r[0]).collect();
    let cfg = CascadeConfig {
        sampler: SamplerConfig { chains: 2, draws: 1000, warmup: 500, seed, ess_min: 200.0, ..Default::default() },
        bands: Bands::default(),
    };
    let r = cascade::cascade_test("demo", &data.outcomes, &mse, &cfg).map_err(js_err)?;
    #[derive(Serialize)]
    struct View {
        p_cascade: f64,
        classification: &'static str,
        beta_mean: f64,
        beta_sd: f64,
        beta_q05: f64,
        beta_q95: f64,
        congruent_fraction: f64,
    }
    let cong = data.outcomes.iter().filter(|&&x| x == 1).count() as f64 / data.outcomes.len() as f64;
    to_json(&View {
        p_cascade: r.p_cascade,
        classification: cascade::classify(r.p_cascade, &cfg.bands).as_str(),
        beta_mean: r.beta_mse.mean,
        beta_sd: r.beta_mse.sd,
        beta_q05: r.beta_mse.q05,
        beta_q95: r.beta_mse.q95,
        congruent_fraction: cong,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_demo_matches_truth() {
        let json = segment_demo(3, 100.0, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let segs = v["segments"].as_array().unwrap();
        let truth = v["true_sides"].as_array().unwrap();
        assert_eq!(segs.len(), 4);
        for (s, t) in segs.iter().zip(truth) {
            assert_eq!(&s[2], t);
        }
    }

    #[test]
    fn histogram_demo_has_mode() {
        let v: serde_json::Value = serde_json::from_str(&speed_histogram_demo(6.0, 8.0, 20, 2).unwrap()).unwrap();
        let lo = v["mode"][0].as_f64().unwrap();
        assert!((5.0..=8.0).contains(&lo), "{lo}");
    }

    #[test]
    fn cascade_demo_runs() {
        let v: serde_json::Value = serde_json::from_str(&cascade_demo(-1.0, 300, 3).unwrap()).unwrap();
        assert!(v["p_cascade"].as_f64().unwrap() > 0.9);
    }
}
