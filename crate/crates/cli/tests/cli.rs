use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn synthetic(id: &str, seed: u64) -> Value {
    json!({
        "id": id,
        "source": { "synthetic": {
            "num_classes": 3, "samples_per_class": 12, "channels": 1,
            "class_separation": 5.0, "noise_sigma": 0.3, "attribute_strength": 0.2, "seed": seed
        }}
    })
}

fn config(out: &Path) -> Value {
    json!({
        "schema_version": 1,
        "seed": 5,
        "profile": "fast",
        "output_dir": out,
        "datasets": [synthetic("alpha", 1)],
        "architectures": ["small_mlp"],
        "threats": ["black_box/partial", "black_box/shadow", "white_box/partial", "white_box/shadow"],
        "attacks": ["mia", "attribute", "stealing"],
        "seeds": [0],
        "train": {
            "batch_size": 8, "epochs": 2, "shuffle_seed": 0,
            "optimizer": { "kind": "sgd", "learning_rate": 0.01, "momentum": 0.9,
                           "weight_decay": 0.0005, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8 }
        },
        "attack": { "width": 16, "epochs": 2, "batch_size": 32, "learning_rate": 0.001 }
    })
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn mlrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlrisk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn error_line(out: &Output) -> Value {
    assert!(!out.status.success(), "expected failure");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_suite_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &config(&out));
    let res = mlrisk(&["full-suite", "--config", cfg.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(summary["cells"], 8);
    for f in ["report/report.csv", "report/summary.txt", "report/report.json", "targets.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let text = std::fs::read_to_string(out.join("report/summary.txt")).unwrap();
    for q in ["== Q1", "== Q2", "== Q3", "== Q4"] {
        assert!(text.contains(q), "summary lacks {q}");
    }
    // One target gives a single point per series.
    assert!(text.contains("insufficient-data"));
    let csv = std::fs::read_to_string(out.join("report/report.csv")).unwrap();
    assert!(csv.starts_with("dataset,arch,threat,attack,metric,train_acc,test_acc,gap,complexity,seed\n"));
}

#[test]
fn inapplicable_pairs_are_recorded_as_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut c = config(&out);
    c["threats"] = json!(["black_box/shadow"]);
    c["attacks"] = json!(["mia", "attribute"]);
    let cfg = write_config(dir.path(), &c);
    let res = mlrisk(&["full-suite", "--config", cfg.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let cells: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("cells/alpha__small_mlp__seed0.json")).unwrap())
            .unwrap();
    assert_eq!(cells["cells"].as_array().unwrap().len(), 1);
    assert_eq!(cells["skipped"][0]["attack"], "attribute");
    assert_eq!(cells["skipped"][0]["reason"], "skipped: inapplicable");
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let sub = dir.path().join(format!("cfg-{name}"));
            std::fs::create_dir(&sub).unwrap();
            let cfg = write_config(&sub, &config(&out));
            let res = mlrisk(&["full-suite", "--config", cfg.to_str().unwrap(), "--jobs", "2"]);
            assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
            files_under(&out)
        })
        .collect();
    assert!(!runs[0].is_empty());
    let names = |r: &[(PathBuf, Vec<u8>)]| r.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    assert_eq!(names(&runs[0]), names(&runs[1]));
    for ((p, a), (_, b)) in runs[0].iter().zip(&runs[1]) {
        assert!(a == b, "{} differs between runs", p.display());
    }
}

#[test]
fn grid_counts_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut c = config(&out);
    c["datasets"] = json!([synthetic("alpha", 1), synthetic("beta", 2)]);
    c["architectures"] = json!(["small_mlp", "simple_cnn"]);
    c["train"]["epochs"] = json!(1);
    let cfg = write_config(dir.path(), &c);
    let res = mlrisk(&["train-target", "--config", cfg.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(std::fs::read_dir(out.join("checkpoints")).unwrap().count(), 4);
}

#[test]
fn overrides_change_output_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(&dir.path().join("unused")));
    let out = |n: &str| dir.path().join(n);
    for (name, seed) in [("s1", "1"), ("s2", "2")] {
        let res = mlrisk(&[
            "train-target",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out(name).to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert!(!out("unused").exists());
    let ckpt = |n: &str| std::fs::read(out(n).join("checkpoints/alpha__small_mlp__seed0.ckpt")).unwrap();
    assert_ne!(ckpt("s1"), ckpt("s2"));
}

#[test]
fn missing_idx_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(&dir.path().join("out"));
    let missing = dir.path().join("nowhere-images.idx");
    c["datasets"] = json!([{
        "id": "idx",
        "source": { "idx": { "images": missing, "labels": dir.path().join("nowhere-labels.idx") } }
    }]);
    let cfg = write_config(dir.path(), &c);
    let err = error_line(&mlrisk(&["train-target", "--config", cfg.to_str().unwrap()]));
    assert_eq!(err["error"]["kind"], "io");
    assert!(err["error"]["message"].as_str().unwrap().contains("nowhere-images.idx"));
}

#[test]
fn invalid_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(&dir.path().join("out"));
    c["threats"] = json!(["black_box/shadow"]);
    c["attacks"] = json!(["attribute"]);
    let cfg = write_config(dir.path(), &c);
    let err = error_line(&mlrisk(&["full-suite", "--config", cfg.to_str().unwrap()]));
    assert_eq!(err["error"]["kind"], "config");

    std::fs::write(&cfg, "{ not json").unwrap();
    let err = error_line(&mlrisk(&["train-target", "--config", cfg.to_str().unwrap()]));
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn report_without_cells_is_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let err = error_line(&mlrisk(&["report", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(err["error"]["kind"], "empty-input");
}

#[test]
fn corrupt_checkpoint_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &config(&out));
    assert!(mlrisk(&["train-target", "--config", cfg.to_str().unwrap()]).status.success());
    let ckpt = out.join("checkpoints/alpha__small_mlp__seed0.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&ckpt, bytes).unwrap();
    let err = error_line(&mlrisk(&["attack", "--config", cfg.to_str().unwrap()]));
    assert_eq!(err["error"]["kind"], "format");
}

#[test]
fn profile_flag_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(&dir.path().join("out")));
    let res = mlrisk(&["train-target", "--config", cfg.to_str().unwrap(), "--profile", "slow"]);
    assert!(!res.status.success());
    let res = mlrisk(&["train-target", "--config", cfg.to_str().unwrap(), "--jobs", "0"]);
    assert_eq!(error_line(&res)["error"]["kind"], "config");
}

#[test]
fn shipped_config_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let cfg: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg["schema_version"], 1);
    let dir = tempfile::tempdir().unwrap();
    let mut small = cfg.clone();
    small["datasets"] = json!([cfg["datasets"][0].clone()]);
    small["architectures"] = json!(["small_mlp"]);
    small["seeds"] = json!([0]);
    small["output_dir"] = json!(dir.path().join("out"));
    small["train"] = config(dir.path())["train"].clone();
    let p = write_config(dir.path(), &small);
    let res = mlrisk(&["train-target", "--config", p.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
}
