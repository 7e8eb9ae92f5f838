use std::path::Path;
use std::process::{Command, Output};

use eamri::harness::image::read_netpbm;

fn eamri(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eamri"))
        .args(args)
        .env_remove("EAMRI_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, overrides: serde_json::Value) -> String {
    let path = dir.join("config.json");
    let mut json = serde_json::json!({
        "image_size": 16, "channels": 8, "heads": 2, "cascades": 2, "recursions": 1,
        "msrb_count": 1, "coils": 2, "batch": 2, "steps": 3, "eval_every": 2
    });
    for (k, v) in overrides.as_object().unwrap() {
        json[k] = v.clone();
    }
    std::fs::write(&path, json.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(eamri(&[]).status.code(), Some(1));
    assert_eq!(eamri(&["simulate", "--out", "x", "--af", "5"]).status.code(), Some(1));
    assert_eq!(eamri(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(eamri(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_or_invalid_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = eamri(&["simulate", "--config", "/nonexistent/config.json", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/config.json"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"channels": 8, "heads": 3}"#).unwrap();
    let o = eamri(&["simulate", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("heads"));

    let o = Command::new(env!("CARGO_BIN_EXE_eamri"))
        .args(["gradcheck"])
        .env("EAMRI_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_dataset_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("junk.eamri");
    std::fs::write(&data, b"not a container at all").unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({}));
    let out = dir.path().join("run");
    let o = eamri(&["train", "--config", &cfg, "--dataset", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`magic`"));
}

#[test]
fn gradcheck_passes_and_exits_zero() {
    let o = eamri(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains(" 0 failed"));
}

#[test]
fn full_mask_reconstruction_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, serde_json::json!({"af": 1, "steps": 0}));
    let s = |p: &str| d.join(p).to_str().unwrap().to_string();
    assert!(eamri(&["simulate", "--config", &cfg, "--out", &s("data"), "--samples", "2"]).status.success());
    let o = eamri(&["train", "--config", &cfg, "--dataset", &s("data/dataset.eamri"), "--out", &s("run")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = eamri(&[
        "recon",
        "--checkpoint",
        &s("run/checkpoint.eamri"),
        "--dataset",
        &s("data/dataset.eamri"),
        "--out",
        &s("img"),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("psnr 999.000 dB"), "{}", stdout(&o));
}

fn pipeline(root: &Path) {
    let cfg = write_config(root, serde_json::json!({}));
    let s = |p: &str| root.join(p).to_str().unwrap().to_string();
    assert!(eamri(&["simulate", "--config", &cfg, "--out", &s("data"), "--samples", "5", "--seed", "3"])
        .status
        .success());
    let data = s("data/dataset.eamri");
    let o = eamri(&["train", "--config", &cfg, "--dataset", &data, "--out", &s("run")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = eamri(&["recon", "--checkpoint", &s("run/checkpoint.eamri"), "--dataset", &data, "--out", &s("img"), "--index", "4"]);
    assert!(o.status.success());
}

#[test]
fn runs_are_reproducible_file_for_file() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let files = [
        "data/dataset.eamri",
        "run/checkpoint.eamri",
        "run/metrics.jsonl",
        "img/recon.pgm",
        "img/target.pgm",
        "img/zero_filled.pgm",
        "img/error.ppm",
        "img/edge0.pgm",
        "img/edge1.pgm",
        "img/edge_gt.pgm",
    ];
    for f in files {
        assert!(read(a.path().join(f)) == read(b.path().join(f)), "{f} differs");
    }
    for f in files.iter().filter(|f| f.starts_with("img/")) {
        let r = read_netpbm(&a.path().join(f)).unwrap();
        assert_eq!((r.width, r.height), (16, 16), "{f}");
    }
    let log = String::from_utf8(read(a.path().join("run/metrics.jsonl"))).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, [0, 2, 3]);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &str| d.join(p).to_str().unwrap().to_string();
    let full = write_config(d, serde_json::json!({}));
    assert!(eamri(&["simulate", "--config", &full, "--out", &s("data"), "--samples", "5"]).status.success());
    let data = s("data/dataset.eamri");
    assert!(eamri(&["train", "--config", &full, "--dataset", &data, "--out", &s("straight")]).status.success());

    let short = d.join("short.json");
    let text = std::fs::read_to_string(&full).unwrap().replace(r#""steps":3"#, r#""steps":2"#);
    assert!(text.contains(r#""steps":2"#));
    std::fs::write(&short, text).unwrap();
    assert!(eamri(&["train", "--config", short.to_str().unwrap(), "--dataset", &data, "--out", &s("split")]).status.success());
    let o = eamri(&[
        "train",
        "--config",
        &full,
        "--dataset",
        &data,
        "--out",
        &s("split"),
        "--checkpoint",
        &s("split/checkpoint.eamri"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(d.join("straight/checkpoint.eamri")) == read(d.join("split/checkpoint.eamri")));
    assert_eq!(
        std::fs::read_to_string(d.join("straight/metrics.jsonl")).unwrap(),
        std::fs::read_to_string(d.join("split/metrics.jsonl")).unwrap()
    );

    let other = write_config(d, serde_json::json!({"lr": 0.1}));
    let o = eamri(&["train", "--config", &other, "--dataset", &data, "--out", &s("split"), "--checkpoint", &s("split/checkpoint.eamri")]);
    assert_eq!(o.status.code(), Some(1));

    let o = eamri(&["eval", "--checkpoint", &s("split/checkpoint.eamri"), "--dataset", &data]);
    assert!(o.status.success());
    let table = stdout(&o);
    assert!(table.contains("model") && table.contains("zero-filled"), "{table}");
}

#[test]
fn ablate_reports_every_run_in_parameter_order() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &str| d.join(p).to_str().unwrap().to_string();
    let cfg = write_config(d, serde_json::json!({"steps": 1}));
    assert!(eamri(&["simulate", "--config", &cfg, "--out", &s("data"), "--samples", "3"]).status.success());
    let o = eamri(&["ablate", "--config", &cfg, "--dataset", &s("data/dataset.eamri"), "--out", &s("abl")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_slice(&read(d.join("abl/ablation.json"))).unwrap();
    let labels: Vec<&str> = rows.as_array().unwrap().iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["full-sobel", "m1-sobel", "m2-sobel", "m3-sobel", "full-canny"]);
    let p: Vec<u64> = rows.as_array().unwrap().iter().map(|r| r["parameters"].as_u64().unwrap()).collect();
    assert!(p[1] < p[2] && p[2] < p[3] && p[3] < p[0]);
    assert_eq!(p[0], p[4]);
}
