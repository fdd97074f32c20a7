use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_submap-align"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn binary")
}

fn small_config(dir: &Path) {
    std::fs::write(
        dir.join("cfg.toml"),
        "[scenario]\nn_objects = 60\nembedding_dim = 32\nseed = 2\n[eval]\nseeds = 1\nplace_recognition = false\n",
    )
    .unwrap();
}

#[test]
fn simulate_then_align_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    let out = run(&["simulate", "--config", "cfg.toml", "--out", "sim"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("sim/ground_truth.jsonl").exists());

    let out = run(
        &["align", "sim/seed0002_robot0.jsonl", "sim/seed0002_robot1.jsonl", "--config", "cfg.toml", "--accepted-only"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["accepted"], true);
        assert!(v["count"].as_u64().unwrap() >= 4);
    }

    let out = run(
        &["evaluate", "--config", "cfg.toml", "--input", "sim", "--no-timing", "--out-csv", "a.csv", "--out-json", "a.json"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["evaluate", "--config", "cfg.toml", "--no-timing", "--serial", "--out-csv", "b.csv"], d);
    assert!(out.status.success());
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    assert!(String::from_utf8(a).unwrap().starts_with("pair_id,heading_bin,count,accepted,trans_err_m,rot_err_deg,success,wall_time_ms\n"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("a.json")).unwrap()).unwrap();
    assert!(report["mean_success"].as_f64().unwrap() > 0.5);
}

#[test]
fn evaluate_rejects_bad_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["evaluate", "--ablate", "fusion=median"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fusion"));
}

#[test]
fn oracle_check_reports_and_bounds_n() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["oracle-check", "--n", "10", "--trials", "40"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("within 0.95x"));
    assert!(!run(&["oracle-check", "--n", "21"], dir.path()).status.success());
}
