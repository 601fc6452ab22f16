use std::path::Path;
use std::process::{Command, Output};

use quadretarget_cli::{cmd_fixture, FixtureSpec};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadretarget"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn fixture(dir: &Path, kind: &str) {
    cmd_fixture(
        &FixtureSpec {
            kind: kind.into(),
            ..Default::default()
        },
        &dir.join(kind),
    )
    .unwrap();
}

/// Column of the single data row of a metrics CSV.
fn metric(dir: &Path, column: &str, row: usize) -> String {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<_> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == column).unwrap();
    lines.nth(row).unwrap().split(',').nth(idx).unwrap().to_string()
}

#[test]
fn smr_on_trot_keeps_feet_planted() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "trot");
    let out = bin(
        &[
            "smr",
            "--robot",
            "trot/robot.json",
            "--motion",
            "trot/motion.json",
            "--out",
            "o",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let slide: f64 = metric(tmp.path().join("o").as_path(), "foot_slide_mm", 0)
        .parse()
        .unwrap();
    assert!(slide < 3.0, "{slide}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "smr");
    assert!(manifest["outputs"]["motion.json"].as_str().unwrap().len() == 64);
}

#[test]
fn missing_robot_exits_2_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "trot");
    let out = bin(
        &["smr", "--robot", "no_such_robot.json", "--motion", "trot/motion.json"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_robot.json"));
}

#[test]
fn missing_flag_and_bad_config_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["smr", "--motion", "m.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--robot"));
    std::fs::write(tmp.path().join("c.json"), r#"{"robt": "x"}"#).unwrap();
    let out = bin(&["smr", "--config", "c.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_motion_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "trot");
    std::fs::write(tmp.path().join("bad.json"), "{\"fps\": 30,\n  \"keypoints\": [").unwrap();
    let out = bin(
        &["smr", "--robot", "trot/robot.json", "--motion", "bad.json"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_drives_a_run_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "trot");
    std::fs::write(
        tmp.path().join("run.json"),
        r#"{"robot": "trot/robot.json", "motion": "trot/motion.json", "seed": 4,
            "tmr": {"n_warm": 1, "n_iter": 0}}"#,
    )
    .unwrap();
    let out = bin(
        &["tmr", "--config", "run.json", "--seed", "7", "--out", "o"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["tmr"]["n_warm"], 1);
}

#[test]
fn retarget_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "trot");
    let args = |out: &'static str| {
        [
            "retarget",
            "--robot",
            "trot/robot.json",
            "--motion",
            "trot/motion.json",
            "--budget-warm",
            "3",
            "--budget-iter",
            "1",
            "--out",
            out,
        ]
    };
    assert!(bin(&args("a"), tmp.path()).status.success());
    assert!(bin(&args("b"), tmp.path()).status.success());
    let names: Vec<_> = std::fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(names.len() >= 6);
    for name in names {
        let a = std::fs::read(tmp.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }
}

#[test]
fn identity_warp_preserves_duration() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "trot");
    let out = bin(
        &[
            "tmr",
            "--robot",
            "trot/robot.json",
            "--motion",
            "trot/motion.json",
            "--budget-warm",
            "1",
            "--budget-iter",
            "0",
            "--out",
            "o",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let src = quadretarget::motion::load_motion(tmp.path().join("trot/motion.json")).unwrap();
    let res = quadretarget::motion::load_motion(tmp.path().join("o/motion.json")).unwrap();
    assert!((src.duration() - res.duration()).abs() < 1e-9);
    let history = std::fs::read_to_string(tmp.path().join("o/tmr_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    assert!(history.lines().nth(1).unwrap().starts_with("0,warm,1,"));
}

#[test]
fn reconstruct_reports_recovery() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "fast-trot");
    let out = bin(
        &[
            "reconstruct",
            "--robot",
            "fast-trot/robot.json",
            "--motion",
            "fast-trot/motion.json",
            "--out",
            "o",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rate: f64 = metric(&tmp.path().join("o"), "recovery_rate_pct", 0).parse().unwrap();
    assert!(rate > 50.0, "{rate}");
}

#[test]
fn metrics_of_identical_motions() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "walk");
    let out = bin(
        &[
            "metrics",
            "--motion",
            "walk/motion.json",
            "--reference",
            "walk/motion.json",
            "--out",
            "o",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let dir = tmp.path().join("o");
    assert_eq!(metric(&dir, "dtw_l1_mm", 0).parse::<f64>().unwrap(), 0.0);
    assert_eq!(metric(&dir, "contact_iou", 0).parse::<f64>().unwrap(), 1.0);
}

#[test]
fn unknown_fixture_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["fixture", "--kind", "gallop"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
