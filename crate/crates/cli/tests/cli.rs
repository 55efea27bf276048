use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fgnet::digitizer::{render_trace, AxisCalibration};
use tempfile::TempDir;

const SMALL_CNN: &str = "model.architecture=conv1d:2:9,batchnorm,relu,maxpool:4:4,flatten,dense:14";

fn fgnet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgnet"))
        .env("FGNET_OUT_DIR", out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = fgnet(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn synth(dir: &Path, name: &str, per_class: &str, seed: &str) -> String {
    let path = dir.join(name);
    ok(dir, &["synth", "--per-class", per_class, "--seed", seed, "--output", path.to_str().unwrap()]);
    path.to_str().unwrap().to_string()
}

#[test]
fn zero_head_model_predicts_uniformly() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let data = synth(out, "d.csv", "1", "1");
    let model = out.join("zero.fgm");
    ok(out, &["init-model", "--zero-head", "--output", model.to_str().unwrap()]);
    let text = ok(out, &["predict", "--model-file", model.to_str().unwrap(), "--data", &data, "--top-k", "14"]);
    let probs: Vec<&str> = text.lines().filter(|l| l.trim_end().ends_with('%')).collect();
    assert_eq!(probs.len(), 14);
    assert!(probs.iter().all(|l| l.trim_end().ends_with("7.14%")), "{text}");
}

#[test]
fn crossval_report_has_table_shape_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let data = synth(out, "d.csv", "4", "2");
    let args = ["crossval", "--data", &data, "--model", "svm", "--repeats", "3", "--folds", "2", "--set", "svm.epochs=5"];
    let text = ok(out, &args);
    assert!(text.contains("Mean"));
    let report = out.join("crossval-svm.json");
    let first = fs::read(&report).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(json["per_repeat_accuracies"].as_array().unwrap().len(), 3);
    assert_eq!(json["config_snapshot"]["evaluation.n_folds"], "2");
    assert!(out.join("crossval-svm.svg").exists());
    ok(out, &args);
    assert_eq!(fs::read(&report).unwrap(), first);
    // thread count must not change results
    let mut par = args.to_vec();
    par.extend(["--jobs", "2"]);
    ok(out, &par);
    let a: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(a["per_repeat_accuracies"], b["per_repeat_accuracies"]);
    assert_eq!(a["confusion_matrix"], b["confusion_matrix"]);
}

#[test]
fn digitize_then_preprocess() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let images = out.join("images");
    fs::create_dir(&images).unwrap();
    let cal = AxisCalibration::default();
    for (name, depth) in [("a", 30.0), ("b", 50.0), ("c", 70.0)] {
        let img = render_trace(|w| 90.0 - depth * (-((w - 2500.0) / 150.0f64).powi(2)).exp(), 393, 320, &cal).unwrap();
        fs::write(images.join(format!("{name}.pgm")), img.to_pgm()).unwrap();
    }
    let traces = out.join("traces");
    ok(out, &["digitize", images.to_str().unwrap(), "--out-dir", traces.to_str().unwrap()]);
    assert_eq!(fs::read_dir(&traces).unwrap().count(), 3);
    let manifest = out.join("labels.csv");
    fs::write(&manifest, "source_id,label\na,amide\nb,ester\nc,nitro\n").unwrap();
    let dataset = out.join("ds.csv");
    ok(out, &["preprocess", "--manifest", manifest.to_str().unwrap(), traces.to_str().unwrap(), "--output", dataset.to_str().unwrap()]);
    let text = fs::read_to_string(&dataset).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 2 + 404);
}

#[test]
fn preprocess_flat_trace_and_bad_label() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let trace: String = std::iter::once("wavenumber,transmittance\n".to_string())
        .chain((0..=36).map(|i| format!("{},42\n", 4000 - i * 100)))
        .collect();
    fs::write(out.join("flat.csv"), trace).unwrap();
    let manifest = out.join("m.txt");
    fs::write(&manifest, "source_id,label\nflat,amide\n").unwrap();
    let dataset = out.join("flat-ds.csv");
    let trace_path = out.join("flat.csv");
    ok(out, &["preprocess", "--manifest", manifest.to_str().unwrap(), trace_path.to_str().unwrap(), "--output", dataset.to_str().unwrap()]);
    let text = fs::read_to_string(&dataset).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), 406);
    assert!(row[2..].iter().all(|v| *v == "50.5"));

    fs::write(&manifest, "source_id,label\nflat,amidex\n").unwrap();
    let o = fgnet(out, &["preprocess", "--manifest", manifest.to_str().unwrap(), trace_path.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("amidex") && err.contains("carboxylic"), "{err}");
}

#[test]
fn empty_image_fails_with_diagnostic() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let img = out.join("empty.pgm");
    fs::write(&img, "").unwrap();
    let o = fgnet(out, &["digitize", img.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty.pgm"));
    assert!(o.stdout.is_empty());
}

#[test]
fn invalid_config_aborts_before_work() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let cfg = out.join("run.conf");
    fs::write(&cfg, "[train]\nepochs = 0\n").unwrap();
    let target = out.join("never.csv");
    let o = fgnet(out, &["synth", "--config", cfg.to_str().unwrap(), "--output", target.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(!target.exists());
    let o = fgnet(out, &["config", "--set", "train.nope=1"]);
    assert!(!o.status.success());
}

#[test]
fn train_evaluate_undersample_transfer() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let old = synth(out, "old.csv", "3", "3");
    let new = synth(out, "new.csv", "4", "4");
    let model = out.join("m.fgm");
    ok(out, &["train", "--data", &old, "--model", "cnn", "--set", SMALL_CNN, "--set", "train.epochs=2", "--output", model.to_str().unwrap()]);
    let text = ok(out, &["evaluate", "--model-file", model.to_str().unwrap(), "--data", &new]);
    assert!(text.contains("holdout"));
    assert!(out.join("evaluate-new.json").exists());

    let capped = out.join("capped.csv");
    ok(out, &["undersample", "--data", &new, "--per-class", "2", "--output", capped.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(&capped).unwrap().lines().count(), 1 + 14 * 2);

    let text = ok(out, &["transfer", "--old", &old, "--new", &new, "--model", "svm", "--set", "svm.epochs=3"]);
    assert_eq!(text.lines().count(), 2);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("transfer-svm.json")).unwrap()).unwrap();
    assert_eq!(json["results"].as_array().unwrap().len(), 2);

    let o = fgnet(out, &["transfer", "--old", &old, "--new", &old]);
    assert!(!o.status.success());
}
