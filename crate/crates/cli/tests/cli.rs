use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use riemstab_cli::{parse_config, run_pipeline, CliError, Outcome};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn riemstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riemstab"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn schema_errors_carry_a_json_pointer() {
    let e =
        parse_config(r#"{"manifold": {"name": "euclidean"}, "field": ["-x1"], "equilibrium": [0], "steps": "many"}"#)
            .unwrap_err();
    assert!(
        matches!(&e, CliError::Schema { pointer, .. } if pointer == "/steps"),
        "{e}"
    );

    let e = parse_config(r#"{"manifold": {"name": "euclidean", "colour": 1}}"#).unwrap_err();
    assert!(
        matches!(&e, CliError::Schema { pointer, .. } if pointer.starts_with("/manifold")),
        "{e}"
    );
}

#[test]
fn dimension_mismatches_name_both_keys() {
    let e = parse_config(r#"{"manifold": {"name": "sphere2"}, "field": ["0", "0", "0"], "equilibrium": [1.5, 0]}"#)
        .unwrap_err();
    let msg = e.to_string();
    assert!(matches!(e, CliError::DimensionMismatch { .. }), "{msg}");
    assert!(msg.contains("manifold") && msg.contains("field"), "{msg}");
}

#[test]
fn unknown_names_are_rejected() {
    let e = parse_config(r#"{"manifold": {"name": "klein-bottle"}, "field": ["0"], "equilibrium": [0]}"#).unwrap_err();
    assert!(e.to_string().contains("klein-bottle"));
    let e = parse_config(r#"{"manifold": {"name": "euclidean"}, "system": "nope"}"#).unwrap_err();
    assert!(matches!(e, CliError::Invalid { ref key, .. } if key == "system"), "{e}");
}

#[test]
fn linear_pipeline_reports_unit_constants() {
    let text = std::fs::read_to_string(config_path("euclidean-decay.json")).unwrap();
    let report = run_pipeline(&parse_config(&text).unwrap()).unwrap();
    assert_eq!(report.outcome, Outcome::Passed);
    let ly = report.stages.lyapunov.result().unwrap();
    let c = ly.exp_constants.unwrap();
    for v in [c.k, c.gamma, c.zeta] {
        assert!((v - 1.0).abs() <= 0.1, "{c:?}");
    }
}

#[test]
fn unstable_system_exits_with_verification_failure() {
    let out = riemstab(&["run", "--config", config_path("unstable.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["outcome"], "verification-failed");
    assert_eq!(report["stages"]["classification"]["status"], "failed");
    assert_eq!(report["stages"]["lyapunov"]["status"], "skipped");
}

#[test]
fn missing_config_and_bad_threads_exit_with_one() {
    let out = riemstab(&["classify"]);
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_riemstab"))
        .args(["run", "--config", config_path("cubic-decay.json").to_str().unwrap()])
        .env("RIEMSTAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("RIEMSTAB_THREADS"));
}

#[test]
fn geometry_commands_answer_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"manifold": {"name": "euclidean"}, "field": ["-x1", "-x2"], "equilibrium": [0, 0],
            "x": [1, 2], "y": [4, 6], "v": [0.5, 0]}"#,
    );
    let out = riemstab(&["distance", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let d = v["distance"].as_f64().unwrap();
    assert!((d - 5.0).abs() < 1e-12, "{v}");

    let out = riemstab(&["geodesic", "--config", &cfg, "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "s,x1,x2,v1,v2");
}

#[test]
fn run_writes_json_and_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("cubic-decay.json");
    let json_dir = dir.path().join("json");
    let out = riemstab(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        json_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(json_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["outcome"], "passed");
    assert_eq!(report["seed"], 42);

    // a passing run attaches no trajectories: the CSV is header-only
    let csv_dir = dir.path().join("csv");
    let out = riemstab(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        csv_dir.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(csv_dir.join("trajectories.csv")).unwrap(),
        "t,x1\n"
    );

    // the unstable run attaches its refuting trajectory
    let out = riemstab(&[
        "run",
        "--config",
        config_path("unstable.json").to_str().unwrap(),
        "--out",
        csv_dir.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let csv = std::fs::read_to_string(csv_dir.join("refutation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x1,x2"));
    assert!(lines.count() > 1);
}

#[test]
fn seed_override_is_recorded_and_reproducible() {
    let cfg = config_path("linear-stable.json");
    let run = |seed: &str| riemstab(&["run", "--config", cfg.to_str().unwrap(), "--seed", seed]).stdout;
    let (a, b, c) = (run("7"), run("7"), run("8"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["seed"], 7);
}
