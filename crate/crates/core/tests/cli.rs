mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn anthro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anthro"))
        .args(args)
        .env_remove("ANTHRO_DEVICE")
        .output()
        .expect("binary runs")
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {s:?}");
    lines[0].to_string()
}

fn gen(dir: &Path, seed: &str) {
    let out = anthro(&["gen", "--n-per-sex", "4", "--seed", seed, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_is_reproducible_and_writes_provenance() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "5");
    gen(&b, "5");
    let ta = common::tree(&a);
    assert_eq!(ta, common::tree(&b));
    assert!(ta.contains_key("provenance.json"));
    assert!(ta.contains_key("manifest.header.json"));
    assert_eq!(ta.keys().filter(|k| k.ends_with(".png")).count(), 8);
    assert!(ta.keys().any(|k| k.starts_with("images/male/")));
}

#[test]
fn perfect_baseline_reports_zero() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "3");
    let d = data.to_str().unwrap();
    let split = anthro(&["split", "--dataset", d, "--seed", "1", "--fractions", "0.5,0.25,0.25"]);
    assert!(split.status.success());

    let report = tmp.path().join("report");
    let r = report.to_str().unwrap();
    let out = anthro(&["eval", "--dataset", d, "--baseline", "perfect", "--out", r]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(report.join("eval_report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "measurement,male,female,total");
    assert_eq!(lines.len(), 7);
    for line in &lines[1..] {
        assert!(line.ends_with(",0,0,0"), "{line}");
    }
    assert!(report.join("eval_report.txt").exists());
    assert!(report.join("provenance.json").exists());
}

#[test]
fn screen_classifies_male_waist() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("m.json");
    fs::write(
        &input,
        r#"{"waist_circumference": 95, "pelvis_circumference": 100, "shoulder_to_wrist": 60,
            "leg_length": 90, "torso_length": 55}"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("screen");
    let out = anthro(&[
        "screen",
        "--measurements",
        input.to_str().unwrap(),
        "--sex",
        "male",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("screening.json")).unwrap()).unwrap();
    assert_eq!(doc["waist_class"], "increased");
    assert_eq!(doc["whr_class"], "increased");
    assert!((doc["whr"].as_f64().unwrap() - 0.95).abs() < 1e-12);
    assert_eq!(doc["marfanoid_flags"]["arm_torso"], "not_assessed");
    assert!(out_dir.join("provenance.json").exists());
}

#[test]
fn missing_measurement_exits_with_data_error() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("m.json");
    fs::write(&input, r#"{"waist_circumference": 95, "pelvis_circumference": 100}"#).unwrap();
    let out = anthro(&["screen", "--measurements", input.to_str().unwrap(), "--sex", "female"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error[validation]: "));
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope");
    let m = missing.to_str().unwrap();

    let out = anthro(&["eval", "--dataset", m, "--baseline", "perfect", "--out", m]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stderr_line(&out).starts_with("error[io]: "));

    let out = anthro(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[config]: "));

    let out = anthro(&["train", "--dataset", m, "--out", m, "--max-epochs", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[config]: "));

    let out = anthro(&["train", "--dataset", m, "--out", m, "--backbone", "vgg19"]);
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_anthro"))
        .args(["train", "--dataset", m, "--out", m])
        .env("ANTHRO_DEVICE", "tpu")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[config]: "));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "arm_torso_max = -1.0\n").unwrap();
    let input = tmp.path().join("m.json");
    fs::write(&input, "{}").unwrap();
    let out = anthro(&[
        "screen",
        "--measurements",
        input.to_str().unwrap(),
        "--sex",
        "male",
        "--thresholds",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unsplit_dataset_is_rejected_for_training() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "8");
    let ckpt = tmp.path().join("ckpt");
    let out = anthro(&["train", "--dataset", data.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error[state]: "));
    assert!(!ckpt.exists());
}

#[test]
fn train_predict_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "21");
    let d = data.to_str().unwrap();
    assert!(anthro(&["split", "--dataset", d, "--fractions", "0.5,0.25,0.25"]).status.success());

    let ckpt = tmp.path().join("ckpt");
    let c = ckpt.to_str().unwrap();
    let out = anthro(&["train", "--dataset", d, "--out", c, "--max-epochs", "2", "--batch-size", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["weights.bin", "model_card.json", "history.csv", "provenance.json"] {
        assert!(ckpt.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(ckpt.join("history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_mae,val_mae"));

    let image = data.join("images/female/female_0000.png");
    let image = if image.exists() {
        image
    } else {
        let dir = data.join("images/female");
        fs::read_dir(&dir).unwrap().next().unwrap().unwrap().path()
    };
    let out = anthro(&["predict", "--model", c, "--image", image.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["measurements"].as_object().unwrap().len(), 16);

    let report = tmp.path().join("report");
    let out = anthro(&["eval", "--dataset", d, "--model", c, "--out", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Arm length") && text.contains("Mean MAE"), "{text}");
}
