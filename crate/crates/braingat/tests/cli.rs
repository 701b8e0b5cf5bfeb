//! End-to-end smoke tests of the command-line binary.

use std::path::Path;
use std::process::Command;

fn braingat() -> Command {
    Command::new(env!("CARGO_BIN_EXE_braingat"))
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");

    // small but trainable dataset
    let scfg = serde_json::json!({
        "n_subjects": 12,
        "n_regions": 8,
        "n_timepoints": 20,
        "n_features": 4,
        "seed": 3
    });
    let scfg_path = dir.path().join("synth.json");
    std::fs::write(&scfg_path, scfg.to_string()).unwrap();
    let status = braingat()
        .args(["synth", "--config"])
        .arg(&scfg_path)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());

    let output = braingat()
        .args(["build-graph", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&out)
        .args(["--metrics", "pearson,minkowski"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("12 graphs"), "{stdout}");
    assert!(out.join("graphs/s0000.json").exists());

    let run_cfg = serde_json::json!({
        "train": {"epochs": 3, "seed": 3},
        "model": {"heads": 2, "hidden_dims": [4, 4]}
    });
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, run_cfg.to_string()).unwrap();
    let status = braingat()
        .args(["train", "--manifest"])
        .arg(&manifest)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("model.json").exists());
    assert!(out.join("loss_trace.json").exists());

    let output = braingat()
        .args(["eval", "--manifest"])
        .arg(&manifest)
        .arg("--model")
        .arg(out.join("model.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("acc="));
    assert!(out.join("eval_metrics.json").exists());
}

#[test]
fn gradcheck_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let output = braingat()
        .args(["gradcheck", "--seed", "17", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("full_model_8n_5f_2h"), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
    assert!(dir.path().join("gradcheck.json").exists());
}

#[test]
fn ablate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let scfg = serde_json::json!({
        "n_subjects": 10,
        "n_regions": 8,
        "n_timepoints": 20,
        "n_features": 4,
        "seed": 5
    });
    let scfg_path = dir.path().join("synth.json");
    std::fs::write(&scfg_path, scfg.to_string()).unwrap();
    assert!(braingat()
        .args(["synth", "--config"])
        .arg(&scfg_path)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());

    // tiny grid including a metric-mask point to exercise graph rebuilding
    let run_cfg = serde_json::json!({
        "train": {"epochs": 2, "folds": 2, "seed": 5},
        "model": {"heads": 1, "hidden_dims": [3]},
        "ablation_grid": [
            {"name": "base"},
            {"name": "P-only", "metric_mask": {"pearson": true, "spearman": false, "minkowski": false}}
        ]
    });
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, run_cfg.to_string()).unwrap();
    let out = dir.path().join("out");
    let output = braingat()
        .args(["ablate", "--manifest"])
        .arg(data.join("manifest.json"))
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(csv.lines().count() == 3, "{csv}");
    assert!(csv.starts_with("name,acc_mean"));
    assert!(out.join("ablation.json").exists());
}

#[test]
fn bad_input_exits_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let missing = Path::new("/nonexistent/manifest.json");
    let output = braingat()
        .args(["train", "--manifest"])
        .arg(missing)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error:"), "{stderr}");
    assert!(stderr.contains("manifest.json"), "{stderr}");

    // usage errors (unknown subcommand) exit with the argument-parser code
    let output = braingat().arg("frobnicate").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}
