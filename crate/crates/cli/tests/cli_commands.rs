use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn shiftwatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftwatch"))
        .current_dir(dir)
        .args(args)
        .args(["--config", "config.json"])
        .output()
        .unwrap()
}

fn setup(dir: &Path) {
    fs::write(dir.join("config.json"), r#"{"seed": 3, "dataset_size": 200, "training": {"epochs": 1}}"#).unwrap();
    let out = shiftwatch(dir, &["train", "--out", "model.bin"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = shiftwatch(dir, &["calibrate", "--model", "model.bin", "--out", "calib.bin"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn detect_writes_one_row_per_frame_and_signals_alarms_in_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    setup(dir);
    let out = shiftwatch(dir, &["episode", "--shift", "covariate", "--index", "1", "--out", "ep.json"]);
    assert!(out.status.success());
    let frames = fs::read_to_string(dir.join("ep.csv")).unwrap().lines().count();

    let out = shiftwatch(
        dir,
        &["detect", "--model", "model.bin", "--calibration", "calib.bin", "--episode", "ep.json", "--out", "trace.csv"],
    );
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 2, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,true_distance,predicted_distance,abs_error,p_min,p_mean,log_martingale,cusum,alarm"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), frames);
    let alarmed = rows.iter().any(|r| r.ends_with("true"));
    assert_eq!(code == 2, alarmed);
}

#[test]
fn detection_mode_must_match_the_calibration_table() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    setup(dir);
    let out = shiftwatch(
        dir,
        &["detect", "--model", "model.bin", "--calibration", "calib.bin", "--shift", "nominal", "--no-lrp", "--out", "t.csv"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("LRP"));
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    fs::write(dir.join("config.json"), "{}").unwrap();
    let out = shiftwatch(dir, &["episode", "--shift", "sideways", "--out", "ep.json"]);
    assert!(!out.status.success());
    let out = shiftwatch(dir, &["train", "--out", "m.bin", "--seed", "x"]);
    assert!(!out.status.success());
    let out = shiftwatch(dir, &["detect", "--model", "missing.bin", "--calibration", "c.bin", "--shift", "nominal", "--out", "t.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.bin"));
}
