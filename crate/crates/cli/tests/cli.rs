//! End-to-end tests of the `fpa` binary: exit codes, file schemas, and
//! rerun determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fpa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fpa"))
}

fn mini_config(dir: &Path, overrides: &[(&str, &str)]) -> PathBuf {
    let mut json = String::from(
        r#"{
  "dataset": {
    "source": { "synthetic": { "train_samples": 120, "test_samples": 40, "seed": 7 } },
    "normalization": "range"
  },
  "model": {
    "input": [28, 28, 1],
    "layers": [
      { "conv": { "out_channels": 4, "kernel": 3, "stride": 1, "padding": 1 } },
      "relu",
      { "pool": { "window": 2 } },
      "flatten",
      { "dense": { "units": 10 } }
    ]
  },
  "train": {
    "epochs": 2, "lr": __LR__, "momentum": 0.9, "weight_decay": 0.0005,
    "lr_drop_epochs": [], "lr_drop_factor": 10.0, "batch_size": 32, "seed": 42,
    "fpa": { "p": 0.5, "p1_max": 0.25, "p2": 0.1, "s_max": 3, "mask_value": 0.0 },
    "rectangle": { "prob": 0.5, "area_range": [0.02, 0.33], "aspect_range": [0.3, 3.3], "mask_value": 0.0 }
  },
  "eval": {
    "estimators": __ESTIMATORS__,
    "ig_steps": 8, "sg_samples": 4, "sg_sigma": 0.2,
    "fractions": [0.0, 0.25, 0.5, 0.75, 1.0],
    "samples": __SAMPLES__, "bootstrap_resamples": 50, "mask_value": 0.0, "seed": 123
  }
}"#,
    );
    let mut lr = "0.05";
    let mut estimators = r#"["random", "ig_sum", "sq-sg_sum"]"#;
    let mut samples = "12";
    for (key, value) in overrides {
        match *key {
            "lr" => lr = value,
            "estimators" => estimators = value,
            "samples" => samples = value,
            other => panic!("unknown override {other}"),
        }
    }
    json = json.replace("__LR__", lr);
    json = json.replace("__ESTIMATORS__", estimators);
    json = json.replace("__SAMPLES__", samples);
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

#[test]
fn malformed_config_exits_2_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{ \"dataset\": { \"source\": ").unwrap();
    let (code, stderr) = exit_code(
        fpa().args(["train", "--config"]).arg(&path).args(["--arm", "none", "--out"]).arg(dir.path()),
    );
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("config error"), "{stderr}");

    // unknown field gets a named diagnostic
    let path2 = dir.path().join("bad2.json");
    let cfg = mini_config(dir.path(), &[]);
    let mut text = fs::read_to_string(cfg).unwrap();
    text = text.replace("\"epochs\"", "\"epocs\"");
    fs::write(&path2, text).unwrap();
    let (code, stderr) = exit_code(
        fpa().args(["train", "--config"]).arg(&path2).args(["--arm", "none", "--out"]).arg(dir.path()),
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("epocs"), "diagnostic should name the field: {stderr}");
}

#[test]
fn unknown_estimator_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), &[("estimators", r#"["gradcam"]"#)]);
    let (code, stderr) = exit_code(
        fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "none", "--out"]).arg(dir.path()),
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("gradcam"), "{stderr}");
}

#[test]
fn divergent_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), &[("lr", "1000000.0")]);
    let (code, stderr) = exit_code(
        fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "none", "--out"]).arg(dir.path()),
    );
    assert_eq!(code, 4, "{stderr}");
    assert!(stderr.contains("diverg"), "{stderr}");
}

#[test]
fn train_writes_metrics_with_one_row_per_epoch_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), &[]);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    run_ok(fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "fpa", "--out"]).arg(&out1));
    run_ok(fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "fpa", "--out"]).arg(&out2));

    let metrics = fs::read_to_string(out1.join("train_metrics_fpa.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    // comment + header + one row per epoch
    assert_eq!(rows.len(), 2 + 2);
    assert!(rows[0].starts_with("# config_hash="));
    assert_eq!(rows[1], "epoch,lr,mean_loss,train_accuracy,val_accuracy");

    let a = fs::read(out1.join("model_fpa.json")).unwrap();
    let b = fs::read(out2.join("model_fpa.json")).unwrap();
    assert_eq!(a, b, "checkpoints must be byte-identical across reruns");

    // same seed, different arm: parameters differ only through the
    // augmentation draws, so the checkpoints must not coincide
    run_ok(fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "none", "--out"]).arg(&out1));
    let none: serde_json::Value =
        serde_json::from_slice(&fs::read(out1.join("model_none.json")).unwrap()).unwrap();
    let fpa_ckpt: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(none["train_seed"], fpa_ckpt["train_seed"]);
    assert_ne!(none["params"], fpa_ckpt["params"]);
}

#[test]
fn saliency_archive_schema_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), &[]);
    let out = dir.path().join("run");
    run_ok(fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "fpa", "--out"]).arg(&out));
    let ckpt = out.join("model_fpa.json");
    run_ok(fpa().args(["saliency", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(&ckpt).arg("--out").arg(&out));

    // one map per (sample, estimator): 12 samples x 28 x 28 f32
    for est in ["random", "ig_sum", "sq-sg_sum"] {
        let bin = fs::read(out.join("saliency_fpa").join(format!("{est}.bin"))).unwrap();
        assert_eq!(bin.len(), 12 * 28 * 28 * 4, "{est}");
        let sidecar: serde_json::Value = serde_json::from_slice(
            &fs::read(out.join("saliency_fpa").join(format!("{est}.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(sidecar["num_samples"], 12);
        assert_eq!(sidecar["classes"].as_array().unwrap().len(), 12);
    }

    // squared estimator never stores negatives
    let bin = fs::read(out.join("saliency_fpa/sq-sg_sum.bin")).unwrap();
    for chunk in bin.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        assert!(v >= 0.0, "sq-sg_sum produced negative score {v}");
    }

    // rerun is byte-identical
    let out2 = dir.path().join("run2");
    run_ok(fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "fpa", "--out"]).arg(&out2));
    run_ok(
        fpa().args(["saliency", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(out2.join("model_fpa.json")).arg("--out").arg(&out2),
    );
    for est in ["random", "ig_sum", "sq-sg_sum"] {
        let a = fs::read(out.join("saliency_fpa").join(format!("{est}.bin"))).unwrap();
        let b = fs::read(out2.join("saliency_fpa").join(format!("{est}.bin"))).unwrap();
        assert_eq!(a, b, "{est} archive differs across reruns");
    }
}

#[test]
fn curves_start_at_one_and_sample_count_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), &[]);
    let out = dir.path().join("run");
    run_ok(fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "none", "--out"]).arg(&out));
    let ckpt = out.join("model_none.json");
    run_ok(fpa().args(["saliency", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(&ckpt).arg("--out").arg(&out));
    run_ok(
        fpa().args(["curves", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(&ckpt).arg("--saliency").arg(out.join("saliency_none")).arg("--out").arg(&out),
    );

    let csv = fs::read_to_string(out.join("curves_none.csv")).unwrap();
    let mut saw_zero_fraction = 0;
    for line in csv.lines().skip(2) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[0] == "0" {
            assert_eq!(cells[1], "1", "curve must start at exactly 1: {line}");
            saw_zero_fraction += 1;
        }
    }
    // two directions per estimator, three estimators
    assert_eq!(saw_zero_fraction, 6);

    let fidelity: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("fidelity_none.json")).unwrap()).unwrap();
    assert_eq!(fidelity["num_samples"], 12);
    for est in ["random", "ig_sum", "sq-sg_sum"] {
        assert!(fidelity["results"][est]["a"].is_number(), "{est} missing");
    }

    // an archive computed with a --samples override has the same config
    // hash but the wrong cardinality for the curves command
    let short = dir.path().join("short");
    run_ok(fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "none", "--out"]).arg(&short));
    run_ok(
        fpa().args(["saliency", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(short.join("model_none.json"))
            .args(["--samples", "8", "--out"]).arg(&short),
    );
    let (code, stderr) = exit_code(
        fpa().args(["curves", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(short.join("model_none.json"))
            .arg("--saliency").arg(short.join("saliency_none")).arg("--out").arg(&short),
    );
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.contains("sample-count mismatch"), "{stderr}");
}

#[test]
fn report_percentile_rules() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), &[]);
    let out = dir.path().join("run");
    run_ok(fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "fpa", "--out"]).arg(&out));
    let ckpt = out.join("model_fpa.json");
    run_ok(fpa().args(["saliency", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(&ckpt).arg("--out").arg(&out));
    let saliency = out.join("saliency_fpa");

    // percentile 100: all-zero truncated map
    run_ok(
        fpa().args(["report", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(&ckpt).arg("--saliency").arg(&saliency)
            .args(["--sample-id", "0", "--percentile", "100", "--out"]).arg(&out),
    );
    let heatmap = fs::read_to_string(out.join("report_ig_sum_0/heatmap.csv")).unwrap();
    for line in heatmap.lines().skip(1) {
        for cell in line.split(',') {
            assert_eq!(cell, "0", "expected all-zero map, got {cell}");
        }
    }

    // default percentile 98: at most 2% positive + 2% negative entries survive
    run_ok(
        fpa().args(["report", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(&ckpt).arg("--saliency").arg(&saliency)
            .args(["--sample-id", "1", "--out"]).arg(&out),
    );
    let stats: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report_ig_sum_1/stats.json")).unwrap()).unwrap();
    assert!(stats["truncated_positive_fraction"].as_f64().unwrap() <= 0.02);
    assert!(stats["truncated_negative_fraction"].as_f64().unwrap() <= 0.02);

    let series = fs::read_to_string(out.join("report_ig_sum_1/series.csv")).unwrap();
    assert_eq!(series.lines().count(), 2 + 28 * 28, "one row per pixel rank");

    // percentile outside (50, 100] is a config error
    let (code, _) = exit_code(
        fpa().args(["report", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(&ckpt).arg("--saliency").arg(&saliency)
            .args(["--sample-id", "0", "--percentile", "50", "--out"]).arg(&out),
    );
    assert_eq!(code, 2);
    let (code, _) = exit_code(
        fpa().args(["report", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(&ckpt).arg("--saliency").arg(&saliency)
            .args(["--sample-id", "0", "--percentile", "101", "--out"]).arg(&out),
    );
    assert_eq!(code, 2);

    // sample outside the archive is a data error
    let (code, _) = exit_code(
        fpa().args(["report", "--config"]).arg(&cfg).args(["--checkpoint"]).arg(&ckpt).arg("--saliency").arg(&saliency)
            .args(["--sample-id", "99", "--out"]).arg(&out),
    );
    assert_eq!(code, 3);
}

#[test]
fn checkpoint_config_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), &[]);
    let out = dir.path().join("run");
    run_ok(fpa().args(["train", "--config"]).arg(&cfg).args(["--arm", "none", "--out"]).arg(&out));

    // a config with a different hash (changed seed)
    let other = {
        let text = fs::read_to_string(&cfg).unwrap();
        let path = dir.path().join("other.json");
        fs::write(&path, text.replace("\"seed\": 123", "\"seed\": 124")).unwrap();
        path
    };
    let (code, stderr) = exit_code(
        fpa().args(["saliency", "--config"]).arg(&other).args(["--checkpoint"]).arg(out.join("model_none.json")).arg("--out").arg(&out),
    );
    assert_eq!(code, 3);
    assert!(stderr.contains("config"), "{stderr}");
}
