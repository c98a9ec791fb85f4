use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fusionbench"))
}

/// Tiny scene and model so every subcommand finishes in seconds.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"
[paths]
thermal = "scene/thermal.tif"
rgb = "scene/rgb.tif"
lidar = "scene/lidar.tif"
points = "scene/points.csv"
out_dir = "run"

[split]
train_cols = {{ start = 0, end = 10 }}
val_cols = {{ start = 10, end = 13 }}
test_cols = {{ start = 13, end = 16 }}

[rebalance]
target_per_class = 8

[model]
backbone = {{ family = "tiny_cnn", pretrained = false, feature_dim = 8 }}
per_modality_feature_dim = 8
gate_hidden_dim = 8

[train]
batch_size = 16
max_epochs = 2
n_trials = 2

[scene]
n_rows = 8
n_cols = 16
thermal_resolution_m = 4.0
rgb_resolution_m = 1.0
lidar_resolution_m = 2.0
counts = {{ midden = 12, mound = 12, water = 12 }}
{extra}
"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, args: &[&str]) -> Output {
    let out = bin().arg("--config").arg(config).arg("--quiet").args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(config: &Path, args: &[&str]) -> String {
    let out = run(config, args);
    assert!(out.status.success(), "{args:?} failed");
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_with_resume_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    ok(&config, &["synth"]);
    for f in ["thermal.tif", "rgb.tif", "lidar.tif", "points.csv"] {
        assert!(dir.path().join("scene").join(f).exists(), "{f}");
    }
    ok(&config, &["prepare"]);
    let splits = dir.path().join("run/prepared/splits.jsonl");
    let manifest = fs::read(&splits).unwrap();
    ok(&config, &["prepare"]);
    assert_eq!(fs::read(&splits).unwrap(), manifest);

    let trained = ok(&config, &["train", "--strategy", "late", "--trials", "2"]);
    assert_eq!(trained.matches("(trained)").count(), 2, "{trained}");
    for i in 0..2 {
        assert!(dir.path().join(format!("run/trials/late/trial_{i}/COMPLETE")).exists());
    }
    let again = ok(&config, &["train", "--strategy", "late", "--trials", "2"]);
    assert_eq!(again.matches("already complete").count(), 2, "{again}");

    ok(&config, &["train", "--strategy", "moe", "--trial-range", "0:2"]);
    ok(&config, &["train", "--strategy", "early", "--trials", "2"]);
    let report = ok(&config, &["evaluate"]);
    assert!(report.contains("Thermal"), "{report}");
    let report_dir = dir.path().join("run/report");
    let plots = fs::read_dir(&report_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(plots, 5);
    assert!(report_dir.join("metrics.jsonl").exists());
    assert!(report_dir.join("gating_table.txt").exists());
}

#[test]
fn seed_and_level_flags_change_the_scene() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let points = dir.path().join("scene/points.csv");
    let thermal = dir.path().join("scene/thermal.tif");
    ok(&config, &["synth"]);
    let (base_points, base_thermal) = (fs::read(&points).unwrap(), fs::read(&thermal).unwrap());
    ok(&config, &["synth", "--seed", "7"]);
    assert_ne!(fs::read(&points).unwrap(), base_points);
    ok(&config, &["synth", "--level", "1"]);
    assert_eq!(fs::read(&points).unwrap(), base_points);
    assert_ne!(fs::read(&thermal).unwrap(), base_thermal);
    assert!(!run(&config, &["synth", "--level", "2"]).status.success());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    // nothing synthesized or prepared yet
    assert!(!run(&config, &["prepare"]).status.success());
    assert!(!run(&config, &["train"]).status.success());
    assert!(!run(&config, &["evaluate"]).status.success());

    let bad = write_config(dir.path(), "typo_key = 1");
    let out = run(&bad, &["synth"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo_key"));

    let config = write_config(dir.path(), "");
    assert!(!run(&config, &["train", "--trial-range", "3:1"]).status.success());
    assert!(!run(&config, &["train", "--trials", "2", "--trial-range", "0:2"]).status.success());
}

#[test]
fn evaluate_without_trials_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    ok(&config, &["synth"]);
    ok(&config, &["prepare"]);
    assert!(!run(&config, &["evaluate"]).status.success());
    assert!(!dir.path().join("run/report").exists());
}

#[test]
fn empty_points_fail_prepare() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    ok(&config, &["synth"]);
    fs::write(dir.path().join("scene/points.csv"), "class,easting,northing\n").unwrap();
    let out = run(&config, &["prepare"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no midden"));
}

#[test]
fn pretrained_backbone_without_weights_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    ok(&config, &["synth"]);
    ok(&config, &["prepare"]);
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace(r#"family = "tiny_cnn", pretrained = false, feature_dim = 8"#, r#"family = "paper_resnet50", pretrained = true, feature_dim = 2048"#);
    fs::write(&config, text).unwrap();
    let out = bin()
        .args(["--quiet", "--config"])
        .arg(&config)
        .args(["train", "--trials", "1"])
        .env("FUSIONBENCH_PRETRAINED", dir.path().join("missing.safetensors"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.safetensors"));
}

#[test]
fn tune_lr_reports_each_rate() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    ok(&config, &["synth"]);
    ok(&config, &["prepare"]);
    let out = ok(&config, &["tune-lr", "--strategy", "moe", "--rates", "0.01,0.001"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("moe lr")).count(), 2, "{out}");
    assert!(dir.path().join("run/tune_lr_moe.json").exists());
}
