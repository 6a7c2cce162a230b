//! Exit-code contract and artifact behaviour of the `hotspot` binary.

use std::path::Path;
use std::process::{Command, Output};

use hotspot_core::featurize::write_features_csv_file;
use hotspot_core::{FeatureMatrix, WindowRow};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hotspot"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn hotspot")
}

fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "hotspot {:?} exited with {:?}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("read {rel}: {e}"))
}

#[test]
fn generate_rejects_out_of_range_affected_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["generate", "--affected-fraction", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("affected_fraction"), "diagnostic missing: {stderr}");
}

#[test]
fn generate_twice_writes_identical_files() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run_ok(d1.path(), &["generate", "--users", "40"]);
    run_ok(d2.path(), &["generate", "--users", "40"]);
    for f in ["data/cp.csv", "data/up.csv", "data/labels.csv"] {
        assert_eq!(read(d1.path(), f), read(d2.path(), f), "{f} differs");
    }
}

#[test]
fn train_without_features_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_problems_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    // Missing file.
    let out = run(dir.path(), &["--config", "nope.json", "generate"]);
    assert_eq!(out.status.code(), Some(2));
    // Value outside its domain.
    std::fs::write(dir.path().join("bad_ratio.json"), r#"{"split_ratio": 1.0}"#).unwrap();
    let out = run(dir.path(), &["--config", "bad_ratio.json", "train"]);
    assert_eq!(out.status.code(), Some(2));
    // Unknown key: likely a typo, reject rather than ignore.
    std::fs::write(dir.path().join("typo.json"), r#"{"windw_secs": 300}"#).unwrap();
    let out = run(dir.path(), &["--config", "typo.json", "featurize"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn separable_training_early_stops_with_decreasing_valid_loss() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), &["generate"]);
    run_ok(dir.path(), &["ingest"]);
    run_ok(dir.path(), &["featurize"]);
    run_ok(dir.path(), &["train"]);

    let log = read(dir.path(), "out/train_log.csv");
    let rows: Vec<&str> = log.lines().skip(1).collect();
    assert!(rows.len() < 500, "early stopping never fired ({} rounds)", rows.len());
    let valid: Vec<f64> =
        rows.iter().map(|r| r.split(',').nth(2).unwrap().parse().unwrap()).collect();
    let min = valid.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min < valid[0], "validation loss never improved: {valid:?}");
}

/// A hand-built, perfectly separated features file must evaluate to F1 = 1.
#[test]
fn perfectly_separated_features_evaluate_to_f1_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    let mut rows = Vec::new();
    for u in 0..60 {
        let label = (u % 3 == 0) as u8;
        for w in 0..4i64 {
            // Disjoint value ranges per class; the wiggle avoids constant
            // columns without ever crossing the margin.
            let x = if label == 1 { 5.0 } else { 1.0 } + (w as f64) / 10.0;
            rows.push(WindowRow {
                user_id: format!("user{u:03}"),
                window_start_ms: w * 300_000,
                values: vec![x],
                label: Some(label),
            });
        }
    }
    let matrix = FeatureMatrix { columns: vec!["x".into()], rows };
    write_features_csv_file(dir.path().join("out/features.csv").as_path(), &matrix).unwrap();

    run_ok(dir.path(), &["train"]);
    let out = run_ok(dir.path(), &["evaluate"]);
    let eval: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "out/eval.json")).unwrap();
    assert_eq!(eval["f1"].as_f64().unwrap(), 1.0, "stdout: {:?}", out.stdout);
}

#[test]
fn predict_flags_affected_users_and_handles_empty_and_clean_inputs() {
    let dir = tempfile::tempdir().unwrap();
    // Labels are per-user, so under the default config an affected user's
    // pre-event windows are positive yet look normal; a model trained on
    // them re-flags the identical rows in the all-normal run below. The
    // separable preset degrades the full span, so labels match appearance.
    run_ok(dir.path(), &["generate", "--preset", "separable", "--users", "200"]);
    run_ok(dir.path(), &["ingest"]);
    run_ok(dir.path(), &["featurize"]);
    run_ok(dir.path(), &["train"]);
    run_ok(dir.path(), &["predict"]);

    // Every reported user really is one of the planted affected users, and
    // at least one planted user is reported.
    let affected_truth: Vec<String> = read(dir.path(), "data/labels.csv")
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",1"))
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    let reported: Vec<String> = read(dir.path(), "out/affected_users.csv")
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert!(!reported.is_empty(), "no users reported on degraded input");
    for user in &reported {
        assert!(affected_truth.contains(user), "false alarm on {user}");
    }

    let n_feature_rows = read(dir.path(), "out/features.csv").lines().count() - 1;
    let n_predictions = read(dir.path(), "out/predictions.csv").lines().count() - 1;
    assert_eq!(n_predictions, n_feature_rows);

    // Empty feature file: empty outputs, still exit 0.
    let empty = dir.path().join("empty_out");
    std::fs::create_dir_all(&empty).unwrap();
    std::fs::copy(dir.path().join("out/model.json"), empty.join("model.json")).unwrap();
    let header = read(dir.path(), "out/features.csv").lines().next().unwrap().to_string();
    std::fs::write(empty.join("features.csv"), format!("{header}\n")).unwrap();
    run_ok(dir.path(), &["--out-dir", "empty_out", "predict"]);
    assert_eq!(read(dir.path(), "empty_out/predictions.csv").lines().count(), 1);
    assert_eq!(read(dir.path(), "empty_out/affected_users.csv").lines().count(), 1);

    // A dataset with nobody affected: nobody may be reported.
    run_ok(
        dir.path(),
        &[
            "--data-dir",
            "clean_data",
            "generate",
            "--preset",
            "separable",
            "--users",
            "200",
            "--affected-fraction",
            "0",
        ],
    );
    run_ok(dir.path(), &["--data-dir", "clean_data", "--out-dir", "clean_out", "ingest"]);
    run_ok(dir.path(), &["--data-dir", "clean_data", "--out-dir", "clean_out", "featurize", "--no-labels"]);
    std::fs::copy(dir.path().join("out/model.json"), dir.path().join("clean_out/model.json"))
        .unwrap();
    run_ok(dir.path(), &["--out-dir", "clean_out", "predict"]);
    assert_eq!(
        read(dir.path(), "clean_out/affected_users.csv").lines().count(),
        1,
        "false alarms on an all-normal dataset"
    );
}

#[test]
fn schema_export_prints_and_writes_the_field_catalogue() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(dir.path(), &["schema", "export"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&stdout).expect("schema is JSON");
    assert!(stdout.contains("procedure_type") && stdout.contains("upload_traffic"));
    assert!(parsed.is_object() || parsed.is_array());

    run_ok(dir.path(), &["schema", "export", "--output", "schema.json"]);
    let written = read(dir.path(), "schema.json");
    assert_eq!(written.trim(), stdout.trim());
}
