use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gaze2afc"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_owned()
}

#[test]
fn stage_by_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("synth.toml"), "n_trials = 60\nn_blocks = 2\nseed = 3\n").unwrap();
    run(d, &["synth", "--synth-config", "synth.toml", "--out-dir", "p01"]);
    for f in ["gaze.csv", "keypoints.csv", "trials.csv", "truth.json"] {
        assert!(d.join("p01").join(f).exists(), "{f}");
    }
    run(d, &["ingest", "--gaze", "p01/gaze.csv", "--keypoints", "p01/keypoints.csv", "--trials", "p01/trials.csv", "--out", "session.json"]);
    run(d, &["segment", "session.json", "--threshold", "100", "--out", "segments.json"]);
    run(d, &["speedhist", "session.json", "--out", "hist.csv", "--svg", "hist.svg"]);
    assert_eq!(header(&d.join("hist.csv")), "bin_lo,bin_hi,count,density,kde");
    assert!(std::fs::read_to_string(d.join("hist.svg")).unwrap().starts_with("<svg"));

    run(d, &["features", "segments.json", "p01/trials.csv", "--out", "features.csv"]);
    let feats = std::fs::read_to_string(d.join("features.csv")).unwrap();
    assert_eq!(feats.lines().count(), 61);
    assert!(feats.lines().nth(1).unwrap().starts_with("p01,1,"));

    let small = ["--draws", "500", "--warmup", "500", "--seed", "9"];
    for o in ["decision", "task", "correct"] {
        let out = format!("post_{o}.json");
        let mut args = vec!["fit", "features.csv", "--outcome", o, "--out", out.as_str()];
        args.extend(small);
        run(d, &args);
    }
    run(d, &["mi", "features.csv", "post_decision.json", "post_task.json", "post_correct.json", "--out", "mi.csv", "--svg", "mi.svg"]);
    assert_eq!(
        header(&d.join("mi.csv")),
        "participant_id,n_trials,mi_gaze_decision,mi_gaze_task,mi_gaze_correct,mi_decision_task,mean_correct"
    );

    let mut args = vec!["cascade", "features.csv", "--out", "cascade.csv"];
    args.extend(small);
    run(d, &args);
    let cascade = std::fs::read_to_string(d.join("cascade.csv")).unwrap();
    assert_eq!(cascade.lines().next(), Some("participant,p_gaze_cascade,classification"));
    assert_eq!(cascade.lines().count(), 2);

    let mut args = vec!["importance", "features.csv", "--outcome", "decision", "--out", "importance.csv", "--svg", "importance.svg"];
    args.extend(small);
    run(d, &args);
    assert_eq!(std::fs::read_to_string(d.join("importance.csv")).unwrap().lines().count(), 7);
}

#[test]
fn missing_trials_file_names_ingest_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    run(d, &["synth", "--n-trials", "3", "--out-dir", "data/p01"]);
    std::fs::remove_file(d.join("data/p01/trials.csv")).unwrap();
    let out = bin().current_dir(d).args(["run-all", "--data-dir", "data", "--out-dir", "out"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ingest stage failed"), "{err}");
    assert!(err.contains("trials.csv"), "{err}");

    let out = bin()
        .current_dir(d)
        .args(["ingest", "--gaze", "data/p01/gaze.csv", "--keypoints", "data/p01/keypoints.csv", "--trials", "nope.csv"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingest stage failed"));
}

#[test]
fn bad_config_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "seed = \"x\"\n").unwrap();
    let out = bin().current_dir(tmp.path()).args(["--config", "bad.toml", "run-all"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config stage failed"));
}
