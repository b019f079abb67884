use std::fs;
use std::path::Path;

use mfscm::estimator::EstimationConfig;
use mfscm::simlab::{gen_panel, DgpConfig};
use mfscm::{load_panel, write_panel, Error};

fn write(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

fn baseline_csv(n: usize, skip: Option<usize>) -> String {
    let mut s = String::from("t,k,value\n");
    for t in 1..=n {
        if Some(t) != skip {
            s.push_str(&format!("{t},,{}\n", t as f64 * 0.5));
        }
    }
    s
}

fn manifest(donor_freq: &str) -> String {
    format!(
        r#"t0 = 20
n_covariates = 0

[treated]
id = "tr"
outcomes = "tr.csv"

[[donors]]
id = "a"
freq = "same"
outcomes = "a.csv"

[[donors]]
id = "b"
{donor_freq}
outcomes = "b.csv"
"#
    )
}

#[test]
fn generated_panel_round_trips() {
    let dgp = DgpConfig {
        j: 6,
        ..DgpConfig::default()
    }
    .build()
    .unwrap();
    let (panel, _) = gen_panel(&dgp, 40, 9, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = EstimationConfig {
        basis_degree: 2,
        ..EstimationConfig::default()
    };
    let path = write_panel(&panel, &cfg, dir.path()).unwrap();
    let loaded = load_panel::<f64>(&path).unwrap();
    assert_eq!(loaded.panel, panel);
    assert_eq!(loaded.manifest.estimation, cfg);
}

#[test]
fn gap_in_baseline_series_names_the_period() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "m.toml", &manifest("freq = \"same\""));
    write(dir.path(), "tr.csv", &baseline_csv(24, None));
    write(dir.path(), "a.csv", &baseline_csv(24, None));
    write(dir.path(), "b.csv", &baseline_csv(24, Some(17)));
    match load_panel::<f64>(&dir.path().join("m.toml")) {
        Err(Error::Validation(msgs)) => {
            assert!(
                msgs.iter()
                    .any(|m| m.contains("`b`") && m.contains("missing observation at t=17")),
                "{msgs:?}"
            )
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn incomplete_high_frequency_period_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "m.toml",
        &manifest("freq = \"higher\"\nratio = 3"),
    );
    write(dir.path(), "tr.csv", &baseline_csv(24, None));
    write(dir.path(), "a.csv", &baseline_csv(24, None));
    let mut hf = String::from("t,k,value\n");
    for t in 1..=24 {
        for k in 1..=3 {
            if !(t == 5 && k == 2) {
                hf.push_str(&format!("{t},{k},1.0\n"));
            }
        }
    }
    write(dir.path(), "b.csv", &hf);
    match load_panel::<f64>(&dir.path().join("m.toml")) {
        Err(Error::Validation(msgs)) => assert!(
            msgs.iter()
                .any(|m| m.contains("period t=5 has 2 of 3 high-frequency observations")),
            "{msgs:?}"
        ),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_value_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "m.toml", &manifest("freq = \"same\""));
    write(dir.path(), "tr.csv", &baseline_csv(24, None));
    write(dir.path(), "a.csv", &baseline_csv(24, None));
    write(dir.path(), "b.csv", "t,k,value\n1,,0.5\n2,,abc\n");
    match load_panel::<f64>(&dir.path().join("m.toml")) {
        Err(Error::Parse { file, line, .. }) => {
            assert!(file.ends_with("b.csv"));
            assert_eq!(line, 3);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn wrong_header_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "m.toml", &manifest("freq = \"same\""));
    write(dir.path(), "tr.csv", "time,value\n1,2\n");
    write(dir.path(), "a.csv", &baseline_csv(24, None));
    write(dir.path(), "b.csv", &baseline_csv(24, None));
    assert!(matches!(
        load_panel::<f64>(&dir.path().join("m.toml")),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn horizon_mismatch_lists_units() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "m.toml", &manifest("freq = \"same\""));
    write(dir.path(), "tr.csv", &baseline_csv(24, None));
    write(dir.path(), "a.csv", &baseline_csv(23, None));
    write(dir.path(), "b.csv", &baseline_csv(24, None));
    match load_panel::<f64>(&dir.path().join("m.toml")) {
        Err(Error::Validation(msgs)) => assert!(msgs.iter().any(|m| m.contains("`a`"))),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_frequency_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "m.toml", &manifest("freq = \"weekly\""));
    write(dir.path(), "tr.csv", &baseline_csv(24, None));
    write(dir.path(), "a.csv", &baseline_csv(24, None));
    write(dir.path(), "b.csv", &baseline_csv(24, None));
    match load_panel::<f64>(&dir.path().join("m.toml")) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "donors[1].freq"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_manifest_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_panel::<f64>(&dir.path().join("absent.toml")),
        Err(Error::Io { .. })
    ));
}
