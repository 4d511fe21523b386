use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emo_ig::data::load_dataset;
use emo_ig::model::read_checkpoint;
use emo_ig::training::{evaluate_accuracy, DEFAULT_THRESHOLD};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emo-ig"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Small planted dataset plus one classifier per emotion.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let models = dir.join("models");
    let cfg = configs().join("synthetic.toml");
    ok(&[
        "synth",
        "--landmarks",
        "16",
        "--frames",
        "4",
        "--per-class",
        "40",
        "--planted",
        "4",
        "--seed",
        "1",
        "--out",
        s(&data),
    ]);
    ok(&[
        "train",
        "--manifest",
        s(&data.join("manifest.json")),
        "--emotion",
        "all",
        "--config",
        s(&cfg),
        "--out",
        s(&models),
    ]);
    (data.join("manifest.json"), models)
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        run(&["eval", "--manifest", "m.json", "--bogus"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["train", "--manifest", "m.json"]).status.code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_with_one() {
    let out = run(&[
        "eval",
        "--manifest",
        "/nonexistent/manifest.json",
        "--checkpoint",
        "x.ckpt",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.json"));
}

#[test]
fn synth_train_select_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, models) = fixture(dir.path());
    let out = dir.path().join("select");
    ok(&[
        "select",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&models.join("model-happiness.ckpt")),
        "--models",
        s(&models),
        "--config",
        s(&configs().join("synthetic.toml")),
        "--grid",
        s(&configs().join("grids/synthetic.toml")),
        "--ladder",
        "8,4",
        "--seeds",
        "2",
        "--top-k",
        "4",
        "--out",
        s(&out),
    ]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "emotion,16,8,4");
    assert!(lines[1].starts_with("Happiness,"));
    assert_eq!(lines[1].matches('±').count(), 3, "{report}");
    for f in [
        "report-detail.csv",
        "ranking.csv",
        "global-mask.csv",
        "grid-8.csv",
        "grid-4.csv",
        "landmarks.svg",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "select");
    assert_eq!(summary["result"]["rows"].as_array().unwrap().len(), 3);
    let svg = fs::read_to_string(out.join("landmarks.svg")).unwrap();
    assert_eq!(svg.matches("r=\"6\"").count(), 4);
}

#[test]
fn eval_matches_library_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, models) = fixture(dir.path());
    let ckpt = models.join("model-happiness.ckpt");
    let stdout = ok(&["eval", "--manifest", s(&manifest), "--checkpoint", s(&ckpt)]);
    let printed: f64 = stdout.split_whitespace().nth(1).unwrap().parse().unwrap();
    let expected = evaluate_accuracy(
        &read_checkpoint(&ckpt).unwrap(),
        &load_dataset(&manifest).unwrap(),
        DEFAULT_THRESHOLD,
    )
    .unwrap();
    assert_eq!(printed, expected);
}

#[test]
fn attribute_reports_completeness_gap() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, models) = fixture(dir.path());
    let out = dir.path().join("attr");
    let stdout = ok(&[
        "attribute",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&models.join("model-happiness.ckpt")),
        "--sample",
        "0",
        "--baseline",
        "1",
        "--m",
        "512",
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains("completeness gap"), "{stdout}");
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let r = &summary["result"];
    assert_eq!(r["steps"], 512);
    let gap = r["completeness_gap"].as_f64().unwrap();
    let delta =
        (r["input_output"].as_f64().unwrap() - r["baseline_output"].as_f64().unwrap()).abs();
    assert!(gap <= 1e-2 * delta + 1e-5, "gap {gap}, delta {delta}");
    let mask = fs::read_to_string(out.join("mask.csv")).unwrap();
    assert_eq!(mask.lines().count(), 17);
}

#[test]
fn global_attr_and_plot_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, models) = fixture(dir.path());
    let out = dir.path().join("global");
    let args = |o: &Path| {
        vec![
            "global-attr".to_string(),
            "--manifest".into(),
            s(&manifest).into(),
            "--checkpoint".into(),
            s(&models.join("model-happiness.ckpt")).into(),
            "--models".into(),
            s(&models).into(),
            "--m".into(),
            "16".into(),
            "--top-k".into(),
            "4".into(),
            "--out".into(),
            s(o).into(),
        ]
    };
    let a: Vec<String> = args(&out);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let layout = dir.path().join("data/layout.csv");
    let mask = out.join("global-mask.csv");
    let plot = |name: &str| {
        let p = dir.path().join(name);
        ok(&[
            "plot",
            "--mask",
            s(&mask),
            "--layout",
            s(&layout),
            "--top-k",
            "4",
            "--out",
            s(&p),
        ]);
        fs::read(p).unwrap()
    };
    assert_eq!(plot("a.svg"), plot("b.svg"));
    let held_out = run(&[
        "global-attr",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&models.join("model-happiness.ckpt")),
        "--baseline-override",
        "happiness=999",
        "--out",
        s(&out),
    ]);
    assert_eq!(held_out.status.code(), Some(1));
}
