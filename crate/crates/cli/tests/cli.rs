use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfscm::estimator::EstimationConfig;
use mfscm::simlab::{gen_panel, DgpConfig};
use mfscm::write_panel;

fn mfscm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfscm"))
        .args(args)
        .output()
        .unwrap()
}

fn panel(dir: &Path, t0: usize, t1: usize) -> PathBuf {
    let dgp = DgpConfig {
        j: 6,
        ..DgpConfig::default()
    }
    .build()
    .unwrap();
    let (p, _) = gen_panel(&dgp, t0, t1, 11).unwrap();
    write_panel(&p, &EstimationConfig::default(), dir).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let m = panel(dir.path(), 60, 10);
    let out = dir.path().join("results");
    let o = mfscm(&["fit", "--manifest", s(&m), "--out", s(&out)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert!(json["weights"].is_object());
    let csv = std::fs::read_to_string(out.join("effects.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ATE"));
}

#[test]
fn infer_writes_interval_and_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let m = panel(dir.path(), 60, 10);
    let out = dir.path().join("r");
    let o = mfscm(&[
        "infer",
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--n-boot",
        "50",
        "--block-rule",
        "minpow:0.5:10",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let ci: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("ci.json")).unwrap()).unwrap();
    assert!(ci["ci_lower"].as_f64().unwrap() <= ci["ci_upper"].as_f64().unwrap());
    assert_eq!(ci["block_size"], 10);
    let stats = std::fs::read_to_string(out.join("boot_stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 51);
}

#[test]
fn out_of_range_level_exits_with_config_status() {
    let o = mfscm(&["infer", "--level", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("level must lie in (0,1)"));
}

#[test]
fn failed_run_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let m = panel(dir.path(), 30, 5);
    let out = dir.path().join("r");
    let o = mfscm(&[
        "infer",
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--block-rule",
        "fixed:30",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = mfscm(&[
        "placebo",
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--pseudo-t0",
        "30",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pseudo-t0"));
    assert!(!out.exists());
}

#[test]
fn placebo_runs_inside_the_pre_window() {
    let dir = tempfile::tempdir().unwrap();
    let m = panel(dir.path(), 60, 5);
    let out = dir.path().join("r");
    let o = mfscm(&[
        "placebo",
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--pseudo-t0",
        "50",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("placebo.json")).unwrap()).unwrap();
    assert_eq!(v["effects"].as_array().unwrap().len(), 10);
}

#[test]
fn coverage_simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = mfscm(&[
            "sim-coverage",
            "--J",
            "6",
            "--T0",
            "40",
            "--T1",
            "5",
            "--reps",
            "6",
            "--n-boot",
            "40",
            "--seed",
            "7",
            "--out",
            s(&out),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["coverage.json", "coverage.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn help_lists_defaults() {
    let o = mfscm(&["infer", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in [
        "--manifest",
        "--out",
        "--level",
        "--n-boot",
        "--block-rule",
        "--seed",
        "--variant",
        "--workers",
    ] {
        assert!(text.contains(flag), "{flag}");
    }
    assert!(text.contains("[default: pow:0.8]"));
    assert!(text.contains("[default: 0.9]"));
}
