use std::path::Path;
use std::process::{Command, Output};

fn handfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handfit")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn synth(dir: &Path, seed: &str) {
    let out = handfit(&["synth", "--out", p(dir), "--frames", "4", "--views", "2", "--seed", seed, "--joint-noise-px", "1", "--cloud-noise-m", "0.002"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_fit_eval_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut artifacts = Vec::new();
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        let session = root.join("session");
        synth(&session, "5");
        let ann = root.join("ann.json");
        let report = root.join("report.txt");
        let out = handfit(&["fit", "--session", p(&session), "--out", p(&ann)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = handfit(&["eval", "--pred", p(&ann), "--gt", p(&session.join("gt.json")), "--out", p(&report)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        artifacts.push((std::fs::read(&ann).unwrap(), std::fs::read(&report).unwrap()));
    }
    assert_eq!(artifacts[0], artifacts[1]);
    let report = String::from_utf8(artifacts[0].1.clone()).unwrap();
    assert!(report.starts_with("frames_evaluated = 4\n"), "{report}");
    let mepe: f64 = report.lines().find_map(|l| l.strip_prefix("mepe_mm = ")).unwrap().parse().unwrap();
    assert!(mepe < 15.0, "{mepe}");
}

#[test]
fn eval_prints_fixed_decimals_and_honours_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let session = tmp.path().join("s");
    synth(&session, "6");
    let ann = tmp.path().join("ann.json");
    assert!(handfit(&["fit", "--session", p(&session), "--out", p(&ann), "--hand", "right"]).status.success());
    let out = handfit(&["eval", "--pred", p(&ann), "--gt", p(&session.join("gt.json")), "--max-threshold-mm", "20", "--max-threshold-ra-mm", "40"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("max_threshold_mm = 20.000\n"));
    assert!(text.contains("max_threshold_ra_mm = 40.000\n"));
    assert!(text.contains("pck_at_20.000_mm = "));
    let auc = text.lines().find_map(|l| l.strip_prefix("auc = ")).unwrap();
    assert_eq!(auc.split('.').nth(1).unwrap().len(), 4);
}

#[test]
fn print_config_emits_parseable_defaults() {
    let out = handfit(&["fit", "--print-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("lambda_j2d = 0.01"));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, &text).unwrap();
    let again = handfit(&["fit", "--config", p(&cfg), "--print-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // Usage errors.
    assert_eq!(handfit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(handfit(&["fit", "--session", "x"]).status.code(), Some(2));
    assert_eq!(handfit(&["synth", "--out", p(tmp.path()), "--dropout", "1.5"]).status.code(), Some(2));

    // Validation and layout errors.
    let missing = tmp.path().join("missing");
    let out = handfit(&["fit", "--session", p(&missing), "--out", p(&tmp.path().join("a.json"))]);
    assert_eq!(out.status.code(), Some(3));
    let session = tmp.path().join("s");
    synth(&session, "7");
    let bad_cfg = tmp.path().join("bad.toml");
    std::fs::write(&bad_cfg, "lambda_j2d = -1.0\n").unwrap();
    let out = handfit(&["fit", "--session", p(&session), "--config", p(&bad_cfg), "--out", p(&tmp.path().join("a.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
    std::fs::write(&bad_cfg, "view_weights = [1.0]\n").unwrap();
    let out = handfit(&["fit", "--session", p(&session), "--config", p(&bad_cfg), "--out", p(&tmp.path().join("a.json"))]);
    assert_eq!(out.status.code(), Some(3));

    // A hand that never appears yields no annotated frames.
    let ann = tmp.path().join("left.json");
    let out = handfit(&["fit", "--session", p(&session), "--out", p(&ann), "--hand", "left"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(ann.is_file());
}

#[test]
fn ablate_writes_six_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let session = tmp.path().join("s");
    let out = handfit(&["synth", "--out", p(&session), "--frames", "2", "--seed", "9"]);
    assert!(out.status.success());
    let table = tmp.path().join("ablation.csv");
    let out = handfit(&["ablate", "--session", p(&session), "--gt", p(&session.join("gt.json")), "--out", p(&table)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "configuration,mean_cm,std_cm,frames_annotated,frames_total");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("ego_mask_j2d,"));
}
